#include "csmn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>
#include <stdexcept>
#include <thread>

#include "csmn/hash.hpp"

namespace csmn::eval {

using corpus::Vocabulary;

double f1_hashtags(std::span<const TokenId> pred, std::span<const TokenId> gt) {
  const std::set<TokenId> g(gt.begin(), gt.end());
  if (g.empty()) throw std::invalid_argument("f1_hashtags: empty ground truth");
  const std::set<TokenId> p(pred.begin(), pred.end());
  if (p.empty()) return 0.0;
  std::size_t hit = 0;
  for (auto t : p) hit += g.count(t);
  if (hit == 0) return 0.0;
  const double precision = static_cast<double>(hit) / static_cast<double>(p.size());
  const double recall = static_cast<double>(hit) / static_cast<double>(g.size());
  return 2.0 / (1.0 / precision + 1.0 / recall);
}

namespace {

using NGram = std::vector<TokenId>;

std::map<NGram, std::size_t> ngram_counts(std::span<const TokenId> seq, int n) {
  std::map<NGram, std::size_t> counts;
  const auto len = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + len <= seq.size(); ++i) ++counts[NGram(seq.begin() + static_cast<std::ptrdiff_t>(i), seq.begin() + static_cast<std::ptrdiff_t>(i + len))];
  return counts;
}

std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = a[i - 1] == b[j - 1] ? diag + 1 : std::max(row[j], row[j - 1]);
      diag = up;
    }
  }
  return row[b.size()];
}

}  // namespace

double bleu(std::span<const std::vector<TokenId>> preds, std::span<const std::vector<TokenId>> refs, int n,
            bool smooth) {
  if (n < 1 || n > 4) throw std::invalid_argument("bleu: order must be in 1..4");
  if (preds.size() != refs.size()) throw std::invalid_argument("bleu: prediction and reference counts differ");
  if (preds.empty()) throw std::invalid_argument("bleu: empty corpus");

  std::vector<double> matched(static_cast<std::size_t>(n), 0.0), total(static_cast<std::size_t>(n), 0.0);
  double cand_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    cand_len += static_cast<double>(preds[s].size());
    ref_len += static_cast<double>(refs[s].size());
    for (int k = 1; k <= n; ++k) {
      const auto pc = ngram_counts(preds[s], k);
      const auto rc = ngram_counts(refs[s], k);
      for (const auto& [gram, c] : pc) {
        auto it = rc.find(gram);
        if (it != rc.end()) matched[static_cast<std::size_t>(k - 1)] += static_cast<double>(std::min(c, it->second));
        total[static_cast<std::size_t>(k - 1)] += static_cast<double>(c);
      }
    }
  }
  if (cand_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    double m = matched[static_cast<std::size_t>(k)], t = total[static_cast<std::size_t>(k)];
    if (smooth && k > 0) {
      m += 1;
      t += 1;
    }
    if (m == 0 || t == 0) return 0.0;
    log_sum += std::log(m / t);
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum / n);
}

double rouge_l_pair(std::span<const TokenId> pred, std::span<const TokenId> ref, double beta) {
  if (pred.empty() || ref.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(pred, ref));
  if (lcs == 0) return 0.0;
  const double p = lcs / static_cast<double>(pred.size());
  const double r = lcs / static_cast<double>(ref.size());
  const double b2 = beta * beta;
  return (1 + b2) * p * r / (r + b2 * p);
}

double rouge_l(std::span<const std::vector<TokenId>> preds, std::span<const std::vector<TokenId>> refs, double beta) {
  if (preds.size() != refs.size()) throw std::invalid_argument("rouge_l: prediction and reference counts differ");
  if (preds.empty()) throw std::invalid_argument("rouge_l: no pairs");
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) sum += rouge_l_pair(preds[i], refs[i], beta);
  return sum / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------

std::string_view to_string(NNVariant v) {
  switch (v) {
    case NNVariant::im: return "1nn-im";
    case NNVariant::usr: return "1nn-usr";
    case NNVariant::usrim: return "1nn-usrim";
  }
  return "?";
}

NearestNeighbours::NearestNeighbours(std::span<const Post> train, const corpus::FeatureStore& features,
                                     std::map<std::string, std::vector<TokenId>> user_profiles, std::uint64_t seed)
    : features_(&features), profiles_(std::move(user_profiles)), seed_(seed) {
  if (train.empty()) throw std::invalid_argument("nearest neighbours: empty training split");
  for (const auto& p : train) {
    if (!by_id_.emplace(p.post_id, &p).second) throw std::invalid_argument("duplicate training post " + p.post_id);
    posts_by_user_[p.user_id].push_back(p.post_id);
    pooled_.emplace(p.post_id, features.pooled(p.image_feature_key));
  }
  for (const auto& [id, p] : by_id_) train_.push_back(p);
  for (auto& [u, ids] : posts_by_user_) std::sort(ids.begin(), ids.end());
}

NNResult NearestNeighbours::nearest_image(const std::string& query_key, const std::vector<std::string>* restrict_to) const {
  const num::Tensor q = features_->pooled(query_key);
  auto q_data = q.data();
  const Post* best = nullptr;
  double best_d = std::numeric_limits<double>::infinity();
  auto consider = [&](const Post* p) {
    auto x = pooled_.at(p->post_id).data();
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) d += (x[i] - q_data[i]) * (x[i] - q_data[i]);
    if (d < best_d) {
      best_d = d;
      best = p;
    }
  };
  if (restrict_to) {
    for (const auto& id : *restrict_to) consider(by_id_.at(id));
  } else {
    for (const Post* p : train_) consider(p);
  }
  if (!best) throw std::invalid_argument("nearest_image: no candidates");
  return {best->post_id, best->user_id, best->tokens};
}

std::string NearestNeighbours::nearest_user(std::span<const TokenId> query_profile) const {
  const std::set<TokenId> q(query_profile.begin(), query_profile.end());
  std::string best;
  std::size_t best_overlap = 0;
  bool found = false;
  for (const auto& [user, ids] : posts_by_user_) {
    std::size_t overlap = 0;
    auto it = profiles_.find(user);
    if (it != profiles_.end()) {
      const std::set<TokenId> words(it->second.begin(), it->second.end());
      for (auto t : words) overlap += q.count(t);
    }
    if (!found || overlap > best_overlap) {
      found = true;
      best = user;
      best_overlap = overlap;
    }
  }
  return best;
}

NNResult NearestNeighbours::random_post_of_nearest_user(const std::string& query_post_id,
                                                        std::span<const TokenId> query_profile) const {
  const auto& ids = posts_by_user_.at(nearest_user(query_profile));
  num::Rng rng(num::mix_seed(seed_, fnv1a(query_post_id)));
  const Post* p = by_id_.at(ids[rng.below(ids.size())]);
  return {p->post_id, p->user_id, p->tokens};
}

NNResult NearestNeighbours::nearest_image_of_nearest_user(const std::string& query_key,
                                                          std::span<const TokenId> query_profile) const {
  return nearest_image(query_key, &posts_by_user_.at(nearest_user(query_profile)));
}

NNResult NearestNeighbours::query(NNVariant variant, const std::string& query_post_id, const std::string& query_key,
                                  std::span<const TokenId> query_profile) const {
  switch (variant) {
    case NNVariant::im: return nearest_image(query_key);
    case NNVariant::usr: return random_post_of_nearest_user(query_post_id, query_profile);
    case NNVariant::usrim: return nearest_image_of_nearest_user(query_key, query_profile);
  }
  throw std::invalid_argument("unknown nearest-neighbour variant");
}

// ---------------------------------------------------------------------------

double MetricReport::metric(const std::string& name) const {
  for (const auto& [k, v] : metrics) {
    if (k == name) return v;
  }
  throw std::out_of_range("report has no metric " + name);
}

MetricReport score(const std::string& method, Task task, corpus::SplitMode split,
                   std::span<const PredictionRecord> records) {
  if (records.empty()) throw std::invalid_argument("score: no predictions");
  MetricReport r{method, task, split, {}, records.size()};
  if (task == Task::hashtag) {
    double sum = 0.0;
    for (const auto& rec : records) sum += f1_hashtags(rec.predicted, rec.reference);
    r.metrics.emplace_back("f1", sum / static_cast<double>(records.size()));
    return r;
  }
  std::vector<std::vector<TokenId>> preds, refs;
  for (const auto& rec : records) {
    if (rec.reference.empty()) throw std::invalid_argument("score: empty reference for " + rec.post_id);
    preds.push_back(rec.predicted);
    refs.push_back(rec.reference);
  }
  for (int n = 1; n <= 4; ++n) r.metrics.emplace_back("bleu" + std::to_string(n), bleu(preds, refs, n));
  r.metrics.emplace_back("rouge_l", rouge_l(preds, refs));
  return r;
}

void write_report(std::ostream& out, std::span<const MetricReport> reports, bool header) {
  if (header) out << kReportHeader << '\n';
  char buf[64];
  for (const auto& r : reports) {
    for (const auto& [name, value] : r.metrics) {
      std::snprintf(buf, sizeof buf, "%.9f", value);
      out << r.method << ',' << corpus::to_string(r.task) << ',' << corpus::to_string(r.split) << ',' << name << ','
          << buf << ',' << r.n << '\n';
    }
  }
}

void write_predictions(std::ostream& out, std::span<const PredictionRecord> records, const Vocabulary& vocab) {
  for (const auto& r : records) {
    out << r.post_id << '\t';
    const auto words = vocab.decode(r.predicted);
    for (std::size_t i = 0; i < words.size(); ++i) out << (i ? " " : "") << words[i];
    out << '\n';
  }
}

std::vector<TokenId> reference_tokens(const training::TrainSample& sample) {
  std::vector<TokenId> out;
  for (auto t : sample.target) {
    if (t == Vocabulary::kEos || t == Vocabulary::kPad) break;
    out.push_back(t);
  }
  return out;
}

std::vector<PredictionRecord> predict_csmn(const training::ModelParams& params, const model::ModelConfig& config,
                                           std::span<const training::TrainSample> samples, Task task,
                                           std::size_t max_len, std::size_t threads) {
  std::vector<PredictionRecord> out(samples.size());
  auto work = [&](std::size_t i) {
    const auto& s = samples[i];
    auto tokens = model::greedy_decode(params, config, s.feature, s.profile, max_len);
    if (task == Task::hashtag) tokens = model::dedup_hashtags(tokens);
    out[i] = {s.post_id, std::move(tokens), reference_tokens(s)};
  };
  threads = std::max<std::size_t>(1, std::min(threads, samples.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) work(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < samples.size(); i += threads) work(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::vector<PredictionRecord> predict_nn(const NearestNeighbours& nn, NNVariant variant,
                                         std::span<const training::TrainSample> samples) {
  std::vector<PredictionRecord> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    auto r = nn.query(variant, s.post_id, s.feature_key, s.profile);
    out.push_back({s.post_id, std::move(r.tokens), reference_tokens(s)});
  }
  return out;
}

}  // namespace csmn::eval
