#include "vilsum/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "vilsum/errors.hpp"

namespace vilsum {

std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

namespace {
const char* kReservedTokens[Vocab::kReserved] = {"⟨pad⟩", "⟨s⟩", "⟨\\s⟩", "⟨unk⟩", "⟨p⟩"};
}

Vocab::Vocab() {
  for (const char* t : kReservedTokens) add_token(t);
}

void Vocab::add_token(const std::string& token) {
  if (ids_.count(token)) throw ContractError("vocab token added twice: " + token);
  ids_[token] = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
}

Vocab Vocab::build(const std::vector<std::string>& corpus, int max_size) {
  if (corpus.empty()) throw ConfigError("build_vocab: empty corpus");
  if (max_size <= kReserved) {
    throw ConfigError("build_vocab: max_size must exceed the " + std::to_string(kReserved) +
                      " reserved entries");
  }
  std::map<std::string, long> freq;  // ordered map gives the lexicographic tie-break
  for (const auto& doc : corpus) {
    for (auto& w : tokenize_words(doc)) ++freq[w];
  }
  if (freq.empty()) throw ConfigError("build_vocab: corpus has no word tokens");

  std::vector<std::pair<std::string, long>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocab v;
  for (const auto& [word, count] : ranked) {
    (void)count;
    if (v.size() >= max_size) break;
    v.add_token(word);
  }
  return v;
}

int Vocab::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token_of(int id) const {
  if (id < 0 || id >= size()) {
    throw ContractError("token id " + std::to_string(id) + " out of range for vocab of size " +
                        std::to_string(size()));
  }
  return tokens_[static_cast<size_t>(id)];
}

std::vector<int> Vocab::encode(const std::string& text, int max_tokens) const {
  if (max_tokens < 2) throw ContractError("encode: max_tokens must be >= 2");
  std::vector<int> ids;
  ids.push_back(kStart);
  for (const auto& w : tokenize_words(text)) {
    if (static_cast<int>(ids.size()) >= max_tokens - 1) break;
    ids.push_back(id_of(w));
  }
  ids.push_back(kEnd);
  return ids;
}

std::vector<int> Vocab::encode_paragraphs(const std::vector<std::string>& paragraphs,
                                          int max_tokens,
                                          std::vector<std::pair<int, int>>* spans) const {
  if (max_tokens < 2) throw ContractError("encode_paragraphs: max_tokens must be >= 2");
  if (spans) spans->clear();
  std::vector<int> ids;
  ids.push_back(kStart);
  const int limit = max_tokens - 1;  // leave room for END
  for (size_t p = 0; p < paragraphs.size(); ++p) {
    if (p > 0 && static_cast<int>(ids.size()) < limit) ids.push_back(kPara);
    int begin = static_cast<int>(ids.size());
    for (const auto& w : tokenize_words(paragraphs[p])) {
      if (static_cast<int>(ids.size()) >= limit) break;
      ids.push_back(id_of(w));
    }
    if (spans) spans->emplace_back(begin, static_cast<int>(ids.size()));
  }
  ids.push_back(kEnd);
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    const std::string& tok = token_of(id);
    if (id == kPad || id == kStart || id == kEnd) continue;
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

std::string Vocab::serialize() const {
  std::vector<std::pair<std::string, int>> entries;
  entries.reserve(tokens_.size());
  for (int id = 0; id < size(); ++id) entries.emplace_back(tokens_[static_cast<size_t>(id)], id);
  std::sort(entries.begin(), entries.end());
  std::string out;
  for (const auto& [tok, id] : entries) {
    out += tok;
    out.push_back('\t');
    out += std::to_string(id);
    out.push_back('\n');
  }
  return out;
}

Vocab Vocab::deserialize(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw IoError("vocab line " + std::to_string(line_no) + ": expected token<TAB>id");
    }
    std::string tok = line.substr(0, tab);
    int id;
    try {
      id = std::stoi(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw IoError("vocab line " + std::to_string(line_no) + ": bad id");
    }
    if (id < 0) throw IoError("vocab line " + std::to_string(line_no) + ": negative id");
    if (id >= static_cast<int>(tokens.size())) tokens.resize(static_cast<size_t>(id) + 1);
    if (!tokens[static_cast<size_t>(id)].empty()) {
      throw IoError("vocab line " + std::to_string(line_no) + ": duplicate id " +
                    std::to_string(id));
    }
    tokens[static_cast<size_t>(id)] = std::move(tok);
  }
  if (tokens.size() < kReserved) throw IoError("vocab file too small: reserved entries missing");
  for (int i = 0; i < kReserved; ++i) {
    if (tokens[static_cast<size_t>(i)] != kReservedTokens[i]) {
      throw IoError("vocab file remaps reserved id " + std::to_string(i));
    }
  }
  Vocab v;
  for (size_t id = kReserved; id < tokens.size(); ++id) {
    if (tokens[id].empty()) throw IoError("vocab file has a gap at id " + std::to_string(id));
    v.add_token(tokens[id]);
  }
  return v;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocab file: " + path.string());
  out << serialize();
  if (!out) throw IoError("failed writing vocab file: " + path.string());
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read vocab file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

}  // namespace vilsum
