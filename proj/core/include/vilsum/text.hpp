#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace vilsum {

/// Lowercased word tokens: maximal runs of alphanumeric characters,
/// everything else (whitespace, punctuation) separates.
std::vector<std::string> tokenize_words(const std::string& text);

/// Word-level vocabulary with five reserved entries. Immutable once built.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStart = 1;
  static constexpr int kEnd = 2;
  static constexpr int kUnk = 3;
  static constexpr int kPara = 4;
  static constexpr int kReserved = 5;

  Vocab();  // reserved entries only

  /// Frequency-ranked vocabulary (ties broken lexicographically), truncated
  /// to max_size entries including the reserved ones.
  static Vocab build(const std::vector<std::string>& corpus, int max_size);

  int size() const { return static_cast<int>(tokens_.size()); }
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }
  int id_of(const std::string& token) const;      // kUnk when absent
  const std::string& token_of(int id) const;      // throws on id out of range

  /// START + up to (max_tokens-2) content ids, tail truncated, + END.
  std::vector<int> encode(const std::string& text, int max_tokens) const;

  /// Paragraphs joined with the separator token, encoded as one sequence.
  /// spans, when given, receives each paragraph's [begin,end) id range in
  /// the output (content tokens only; empty range once truncation hits).
  std::vector<int> encode_paragraphs(const std::vector<std::string>& paragraphs, int max_tokens,
                                     std::vector<std::pair<int, int>>* spans = nullptr) const;

  /// Strips PAD/START/END, joins remaining tokens with single spaces.
  std::string decode(std::span<const int> ids) const;

  /// Sorted "token<TAB>id" lines, UTF-8.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  std::string serialize() const;                       // same lines as save()
  static Vocab deserialize(const std::string& text);   // inverse of serialize()

 private:
  void add_token(const std::string& token);

  std::vector<std::string> tokens_;             // index = id
  std::unordered_map<std::string, int> ids_;
};

}  // namespace vilsum
