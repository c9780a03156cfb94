#include "csmn/corpus_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace csmn::corpus {

using nlohmann::json;

namespace {

std::string string_field(const json& j, const char* name, std::size_t line_no) {
  auto it = j.find(name);
  if (it == j.end() || !it->is_string()) {
    throw CorpusFormatError("corpus line " + std::to_string(line_no) + ": missing string field '" + name + "'");
  }
  return it->get<std::string>();
}

}  // namespace

std::vector<RawPost> read_corpus(std::istream& in) {
  std::vector<RawPost> posts;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw CorpusFormatError("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object()) throw CorpusFormatError("corpus line " + std::to_string(line_no) + ": not an object");
    RawPost p;
    p.post_id = string_field(j, "post_id", line_no);
    p.user_id = string_field(j, "user_id", line_no);
    p.body = string_field(j, "body", line_no);
    p.image_feature_key = string_field(j, "image_feature_key", line_no);
    auto tags = j.find("hashtags");
    if (tags == j.end() || !tags->is_array()) {
      throw CorpusFormatError("corpus line " + std::to_string(line_no) + ": missing array field 'hashtags'");
    }
    for (const auto& t : *tags) {
      if (!t.is_string()) throw CorpusFormatError("corpus line " + std::to_string(line_no) + ": hashtag is not a string");
      p.hashtags.push_back(t.get<std::string>());
    }
    if (!ids.insert(p.post_id).second) {
      throw CorpusFormatError("corpus line " + std::to_string(line_no) + ": duplicate post_id '" + p.post_id + "'");
    }
    posts.push_back(std::move(p));
  }
  return posts;
}

std::vector<RawPost> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus " + path.string());
  return read_corpus(in);
}

void write_corpus(std::ostream& out, const std::vector<RawPost>& posts) {
  for (const auto& p : posts) {
    json j = json::object();
    j["post_id"] = p.post_id;
    j["user_id"] = p.user_id;
    j["body"] = p.body;
    j["hashtags"] = p.hashtags;
    j["image_feature_key"] = p.image_feature_key;
    out << j.dump() << '\n';
  }
}

void write_posts(std::ostream& out, Task task, const std::vector<Post>& posts) {
  out << "#csmn-posts 1 " << to_string(task) << '\n';
  for (const auto& p : posts) {
    out << p.post_id << '\t' << p.user_id << '\t' << p.image_feature_key << '\t';
    for (std::size_t i = 0; i < p.tokens.size(); ++i) out << (i ? " " : "") << p.tokens[i];
    out << '\n';
  }
}

std::vector<Post> read_posts(std::istream& in, Task* task) {
  std::string line;
  if (!std::getline(in, line)) throw CorpusFormatError("posts file is empty");
  std::istringstream header(line);
  std::string magic, task_name;
  int version = 0;
  header >> magic >> version >> task_name;
  if (magic != "#csmn-posts" || version != 1) throw CorpusFormatError("posts file: bad header '" + line + "'");
  if (task) *task = parse_task(task_name);
  std::vector<Post> posts;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (int k = 0; k < 3; ++k) {
      const auto tab = line.find('\t', start);
      if (tab == std::string::npos) throw CorpusFormatError("posts file: bad line '" + line + "'");
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    Post p{fields[0], fields[1], {}, fields[2]};
    std::istringstream ids(line.substr(start));
    TokenId id;
    while (ids >> id) p.tokens.push_back(id);
    posts.push_back(std::move(p));
  }
  return posts;
}

}  // namespace csmn::corpus
