#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vilsum/image.hpp"
#include "vilsum/training.hpp"

namespace vilsum {

/// Synthetic multimodal corpus generator. Each document is a stack of
/// short paragraphs; every paragraph owns three content words drawn
/// without replacement from a shared pool, an image that renders those
/// words as pixel blocks, and a caption listing them. A marker token
/// flags the important paragraphs, whose content words concatenated in
/// document order form the reference summary. Importance is therefore
/// only visible in the text, word identity only decides pixel positions,
/// and caption/summary overlap is exactly zero for every unimportant
/// paragraph — so ROUGE-based selection labels provably match the
/// construction and the reorder/selection tasks require tying images to
/// their text spans.
struct SynthConfig {
  int n_docs = 0;
  int min_paragraphs = 3;
  int max_paragraphs = 8;
  int words_per_paragraph = 3;  // content words, which double as the caption
  int n_important = 3;
  int image_size = 32;
  long seed = 42;

  void validate() const;
};

inline constexpr int kSynthPoolWords = 200;     // full two-syllable word pool
inline constexpr int kSynthContentWords = 120;  // leading slice used for content
inline constexpr const char* kSynthMarker = "key";

/// The deterministic word pool: two-syllable consonant-vowel words,
/// enumerated. The first kSynthContentWords are content words; the rest
/// pad paragraphs as filler.
const std::vector<std::string>& synth_word_pool();

/// 32-bit FNV-1a, used to derive per-image noise seeds from text.
std::uint32_t fnv1a(std::string_view s);

/// Renders content words as two fixed 2x2-pixel blocks each (word k of
/// the pool lights blocks k and k + 120 on a 16x16 block grid) over a
/// faint noise floor seeded from the noise tokens. Words outside the pool
/// fall back to a hashed block index.
ImageGrid render_word_image(std::span<const std::string> content_words,
                            std::span<const std::string> noise_tokens, int image_size = 32);

struct GeneratedDoc {
  std::string doc_id;
  std::vector<std::string> paragraphs;
  std::vector<std::string> captions;
  std::string summary;
  std::vector<int> important;     // paragraph indices, ascending
  std::vector<ImageGrid> images;  // one per paragraph, document order
};

GeneratedDoc generate_doc(const SynthConfig& cfg, int doc_idx);

/// One corpus line as stored on disk.
struct CorpusRecord {
  std::string doc_id;
  std::vector<std::string> paragraphs;
  std::vector<std::string> image_paths;
  std::vector<std::string> captions;
  std::string summary;
  std::vector<int> important;  // optional on disk; empty when absent
};

void write_jsonl(const std::filesystem::path& path, std::span<const CorpusRecord> records);
/// Parses one record per line, reporting malformed lines as
/// "path:line: reason". Unknown keys are ignored.
std::vector<CorpusRecord> read_jsonl(const std::filesystem::path& path);

/// Reads records and their images; relative image paths resolve against
/// the JSONL file's directory.
std::vector<MultiModalExample> load_examples(const std::filesystem::path& jsonl_path);

struct SplitStats {
  std::string name;
  int docs = 0;
  double avg_tokens = 0.0;  // paragraph words per document
  double avg_images = 0.0;
};

/// Generates the corpus under out_dir: images/*.pgm plus train.jsonl,
/// val.jsonl, test.jsonl split 80/10/10 by document index.
std::vector<SplitStats> write_corpus(const std::filesystem::path& out_dir,
                                     const SynthConfig& cfg);

}  // namespace vilsum
