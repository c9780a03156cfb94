#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

namespace csmn::app {

namespace {

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON config file (a run_config.json works)");
  cmd->add_option("--profile", f.profile, "paper or desk");
  cmd->add_option("--task", f.task, "caption or hashtag");
  cmd->add_option("--split", f.split, "by_users or by_posts");
  cmd->add_option("--image-mode", f.image_mode, "pool5 or res5c");
  cmd->add_option("--ablate", f.ablate, "no_cnn, no_uc or no_wo; repeatable");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--d-context", f.d_context, "user context memory slots");
}

int report_error(const char* kind, const std::exception& e, int code) {
  std::cerr << "csmn: " << kind << ": " << e.what() << '\n';
  return code;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Context sequence memory network: preprocessing, training, generation and evaluation"};
  app.require_subcommand(1);
  CommonFlags common;
  fs::path out;

  corpus::SynthConfig synth;
  std::string synth_mode = "pool5";
  auto* synth_cmd = app.add_subcommand("synth", "write a deterministic synthetic corpus and feature file");
  synth_cmd->add_option("--users", synth.users, "number of users");
  synth_cmd->add_option("--posts", synth.posts_per_user, "posts per user");
  synth_cmd->add_option("--classes", synth.classes, "image classes");
  synth_cmd->add_option("--feature-dim", synth.feature_dim, "feature dimension");
  synth_cmd->add_option("--noise", synth.noise, "feature noise scale");
  synth_cmd->add_option("--image-mode", synth_mode, "pool5 or res5c");
  synth_cmd->add_option("--seed", synth.seed, "random seed");
  synth_cmd->add_option("--out", out, "output directory")->required();

  fs::path corpus_path;
  auto* pre_cmd = app.add_subcommand("preprocess", "filter, build vocabulary, profiles and split");
  add_common(pre_cmd, common);
  pre_cmd->add_option("--corpus", corpus_path, "corpus file (JSON lines)")->required();
  pre_cmd->add_option("--out", out, "output directory")->required();

  fs::path data_dir, features_path;
  std::optional<fs::path> resume;
  auto* train_cmd = app.add_subcommand("train", "teacher-forced training");
  add_common(train_cmd, common);
  train_cmd->add_option("--data", data_dir, "preprocess output directory")->required();
  train_cmd->add_option("--features", features_path, "feature file")->required();
  train_cmd->add_option("--resume", resume, "checkpoint to continue from");
  train_cmd->add_option("--out", out, "output directory")->required();

  fs::path model_path;
  GenerateRequest request;
  auto* gen_cmd = app.add_subcommand("generate", "greedy decoding for one query");
  add_common(gen_cmd, common);
  gen_cmd->add_option("--data", data_dir, "preprocess output directory")->required();
  gen_cmd->add_option("--features", features_path, "feature file")->required();
  gen_cmd->add_option("--model", model_path, "checkpoint file")->required();
  gen_cmd->add_option("--post-id", request.post_id, "query post (its author's profile, leave-one-out)");
  gen_cmd->add_option("--feature-key", request.feature_key, "image feature key");
  gen_cmd->add_option("--user", request.user_id, "author whose profile is used");
  gen_cmd->add_option("--out", out, "optional output directory");

  std::vector<std::string> methods;
  std::optional<fs::path> eval_model;
  std::string part = "test";
  auto* eval_cmd = app.add_subcommand("evaluate", "score CSMN or nearest-neighbour baselines");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--data", data_dir, "preprocess output directory")->required();
  eval_cmd->add_option("--features", features_path, "feature file")->required();
  eval_cmd->add_option("--method", methods, "csmn, 1nn-im, 1nn-usr or 1nn-usrim; repeatable")->required();
  eval_cmd->add_option("--model", eval_model, "checkpoint file for csmn");
  eval_cmd->add_option("--part", part, "split part to score (test, val or train)");
  eval_cmd->add_option("--out", out, "output directory")->required();

  std::string precision = "both";
  auto* gc_cmd = app.add_subcommand("gradcheck", "compare tape gradients with central differences");
  add_common(gc_cmd, common);
  gc_cmd->add_option("--precision", precision, "f64, f32 or both");
  gc_cmd->add_option("--out", out, "optional output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (synth_cmd->parsed()) {
      synth.image_mode = corpus::parse_image_mode(synth_mode);
      run_synth(synth, out);
      std::cout << "wrote " << (out / kCorpusFile).string() << " and " << (out / kFeaturesFile).string() << '\n';
      return kOk;
    }
    const RunConfig config = resolve_config(common);
    if (pre_cmd->parsed()) {
      const auto s = run_preprocess(config, corpus_path, out);
      std::cout << "kept " << s.kept_posts << " of " << s.raw_posts << " posts from " << s.users << " users; vocabulary "
                << s.vocab_size << '\n';
    } else if (train_cmd->parsed()) {
      const auto r = run_train(config, data_dir, features_path, out, resume);
      std::printf("%zu steps; best selection loss %.6f at epoch %u\n", r.steps, r.best_val_loss, r.best.epoch);
    } else if (gen_cmd->parsed()) {
      const auto tokens = run_generate(config, data_dir, features_path, model_path, request);
      std::string line = request.post_id.value_or(request.feature_key.value_or("")) + "\t";
      for (std::size_t i = 0; i < tokens.size(); ++i) line += (i ? " " : "") + tokens[i];
      std::cout << line << '\n';
      if (!out.empty()) {
        fs::create_directories(out);
        write_text_file(out / "generated.tsv", line + "\n");
        write_text_file(out / kRunConfigFile, config.to_json());
      }
    } else if (eval_cmd->parsed()) {
      const auto reports = run_evaluate(config, data_dir, features_path, methods, eval_model, out, part);
      eval::write_report(std::cout, reports);
    } else if (gc_cmd->parsed()) {
      std::vector<num::Precision> modes;
      if (precision == "f64" || precision == "both") modes.push_back(num::Precision::f64);
      if (precision == "f32" || precision == "both") modes.push_back(num::Precision::f32);
      if (modes.empty()) throw UsageError("--precision must be f64, f32 or both");
      bool ok = true;
      std::ostringstream table;
      for (auto m : modes) {
        const auto r = run_gradcheck(config, m);
        print_gradcheck(table, r);
        ok = ok && r.report.passes(r.tolerance);
      }
      std::cout << table.str();
      if (!out.empty()) {
        fs::create_directories(out);
        write_text_file(out / "gradcheck.tsv", table.str());
        write_text_file(out / kRunConfigFile, config.to_json());
      }
      if (!ok) {
        std::cerr << "csmn: gradient check failed\n";
        return kNumericFailure;
      }
    }
    return kOk;
  } catch (const UsageError& e) {
    return report_error("usage", e, kUsage);
  } catch (const MissingFile& e) {
    return report_error("missing file", e, kMissingFile);
  } catch (const ConfigConflict& e) {
    return report_error("config conflict", e, kConfigConflict);
  } catch (const DataError& e) {
    return report_error("data error", e, kDataError);
  } catch (const training::TrainingDiverged& e) {
    return report_error("numeric failure", e, kNumericFailure);
  } catch (const num::NumericError& e) {
    return report_error("numeric failure", e, kNumericFailure);
  } catch (const std::invalid_argument& e) {
    return report_error("usage", e, kUsage);
  } catch (const std::exception& e) {
    return report_error("error", e, kGeneric);
  }
}

}  // namespace csmn::app
