#include "vilsum/synth.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "json.hpp"
#include "vilsum/errors.hpp"
#include "vilsum/text.hpp"

namespace vilsum {

namespace {

constexpr int kBlockGrid = 16;  // 16x16 blocks of 2x2 pixels on a 32x32 image
constexpr float kNoiseCeiling = 0.06f;

const std::map<std::string, int>& content_index() {
  static const std::map<std::string, int> index = [] {
    std::map<std::string, int> m;
    const auto& pool = synth_word_pool();
    for (int i = 0; i < kSynthContentWords; ++i) m[pool[static_cast<size_t>(i)]] = i;
    return m;
  }();
  return index;
}

float block_intensity(int k) {
  return 0.6f + 0.35f * static_cast<float>((k * 37) % 97) / 96.0f;
}

// Uniform [0,1) from the top 24 bits; exact on every platform.
float unit_draw(std::mt19937& rng) {
  return static_cast<float>(rng() >> 8) * (1.0f / 16777216.0f);
}

std::string join(std::span<const std::string> words, const char* sep = " ") {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += sep;
    out += words[i];
  }
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_docs < 10) {
    throw ConfigError("synthetic corpus requires n_docs ≥ 10, got " + std::to_string(n_docs));
  }
  if (min_paragraphs < 1 || max_paragraphs < min_paragraphs) {
    throw ConfigError("paragraph range [" + std::to_string(min_paragraphs) + ", " +
                      std::to_string(max_paragraphs) + "] is invalid");
  }
  if (n_important < 1 || n_important > min_paragraphs) {
    throw ConfigError("n_important must lie in [1, min_paragraphs]");
  }
  if (words_per_paragraph < 1 ||
      words_per_paragraph * max_paragraphs > kSynthContentWords) {
    throw ConfigError("words_per_paragraph * max_paragraphs must fit the content pool");
  }
  if (image_size != 2 * kBlockGrid) {
    throw ConfigError("synthetic images are fixed at " + std::to_string(2 * kBlockGrid) +
                      "x" + std::to_string(2 * kBlockGrid));
  }
}

const std::vector<std::string>& synth_word_pool() {
  static const std::vector<std::string> pool = [] {
    const std::string consonants = "bdfgklmnprstvz";
    const std::string vowels = "aeiou";
    std::vector<std::string> syllables;
    for (char c : consonants) {
      for (char v : vowels) syllables.push_back(std::string{c, v});
    }
    std::vector<std::string> words;
    words.reserve(kSynthPoolWords);
    for (size_t a = 0; words.size() < kSynthPoolWords; ++a) {
      for (size_t b = 0; b < syllables.size() && words.size() < kSynthPoolWords; ++b) {
        words.push_back(syllables[a] + syllables[b]);
      }
    }
    return words;
  }();
  return pool;
}

std::uint32_t fnv1a(std::string_view s) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

ImageGrid render_word_image(std::span<const std::string> content_words,
                            std::span<const std::string> noise_tokens, int image_size) {
  if (image_size != 2 * kBlockGrid) {
    throw ContractError("render_word_image supports only " + std::to_string(2 * kBlockGrid) +
                        "-pixel images");
  }
  ImageGrid img;
  img.h = image_size;
  img.w = image_size;
  img.pixels.assign(static_cast<size_t>(image_size) * image_size, 0.0f);

  std::string noise_key;
  for (const auto& t : noise_tokens) {
    noise_key += t;
    noise_key += '\x1f';
  }
  std::mt19937 noise_rng(fnv1a(noise_key));
  for (float& p : img.pixels) p = unit_draw(noise_rng) * kNoiseCeiling;

  auto paint_block = [&](int b, float value) {
    int r0 = 2 * (b / kBlockGrid), c0 = 2 * (b % kBlockGrid);
    for (int dr = 0; dr < 2; ++dr) {
      for (int dc = 0; dc < 2; ++dc) img.at(r0 + dr, c0 + dc) = value;
    }
  };
  const auto& index = content_index();
  for (const auto& w : content_words) {
    auto it = index.find(w);
    int k = it != index.end() ? it->second
                              : static_cast<int>(fnv1a(w) % kSynthContentWords);
    float v = block_intensity(k);
    paint_block(k, v);
    paint_block(k + kSynthContentWords, v);
  }
  return img;
}

GeneratedDoc generate_doc(const SynthConfig& cfg, int doc_idx) {
  cfg.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(doc_idx)};
  std::mt19937 rng(seq);

  const auto& pool = synth_word_pool();
  auto filler = [&] {
    return pool[static_cast<size_t>(kSynthContentWords +
                                    uniform_index(rng, kSynthPoolWords - kSynthContentWords))];
  };

  GeneratedDoc doc;
  char idbuf[32];
  std::snprintf(idbuf, sizeof idbuf, "doc_%05d", doc_idx);
  doc.doc_id = idbuf;

  int n_par = cfg.min_paragraphs +
              uniform_index(rng, cfg.max_paragraphs - cfg.min_paragraphs + 1);
  std::vector<int> imp_perm = uniform_permutation(n_par, rng);
  doc.important.assign(imp_perm.begin(), imp_perm.begin() + cfg.n_important);
  std::sort(doc.important.begin(), doc.important.end());

  std::vector<int> content_perm = uniform_permutation(kSynthContentWords, rng);

  for (int p = 0; p < n_par; ++p) {
    bool marked = std::binary_search(doc.important.begin(), doc.important.end(), p);
    std::vector<std::string> content;
    for (int w = 0; w < cfg.words_per_paragraph; ++w) {
      int k = content_perm[static_cast<size_t>(p * cfg.words_per_paragraph + w)];
      content.push_back(pool[static_cast<size_t>(k)]);
    }

    // Layout: [marker-or-filler, filler, c1, filler, c2, filler, c3, filler].
    std::vector<std::string> tokens;
    std::vector<std::string> noise_tokens;
    tokens.push_back(marked ? std::string(kSynthMarker) : filler());
    noise_tokens.push_back(tokens.back());
    for (const auto& c : content) {
      tokens.push_back(filler());
      noise_tokens.push_back(tokens.back());
      tokens.push_back(c);
    }
    tokens.push_back(filler());
    noise_tokens.push_back(tokens.back());

    doc.paragraphs.push_back(join(tokens));
    doc.captions.push_back(join(content));
    doc.images.push_back(render_word_image(content, noise_tokens, cfg.image_size));
  }
  std::vector<std::string> summary_parts;
  for (int p : doc.important) summary_parts.push_back(doc.captions[static_cast<size_t>(p)]);
  doc.summary = join(summary_parts);
  return doc;
}

void write_jsonl(const std::filesystem::path& path, std::span<const CorpusRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& rec : records) {
    nlohmann::json j;
    j["doc_id"] = rec.doc_id;
    j["paragraphs"] = rec.paragraphs;
    j["image_paths"] = rec.image_paths;
    j["captions"] = rec.captions;
    j["summary"] = rec.summary;
    if (!rec.important.empty()) j["important"] = rec.important;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<CorpusRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<CorpusRecord> records;
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& why) {
    throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) fail("record is not a JSON object");

    auto str_array = [&](const char* key, bool required) {
      std::vector<std::string> out;
      if (!j.contains(key)) {
        if (required) fail(std::string("missing '") + key + "'");
        return out;
      }
      if (!j[key].is_array()) fail(std::string("'") + key + "' is not an array");
      for (const auto& e : j[key]) {
        if (!e.is_string()) fail(std::string("'") + key + "' has a non-string entry");
        out.push_back(e.get<std::string>());
      }
      return out;
    };

    CorpusRecord rec;
    if (!j.contains("doc_id") || !j["doc_id"].is_string()) fail("missing string 'doc_id'");
    rec.doc_id = j["doc_id"].get<std::string>();
    rec.paragraphs = str_array("paragraphs", true);
    rec.image_paths = str_array("image_paths", true);
    rec.captions = str_array("captions", true);
    if (!j.contains("summary") || !j["summary"].is_string()) fail("missing string 'summary'");
    rec.summary = j["summary"].get<std::string>();
    if (j.contains("important")) {
      if (!j["important"].is_array()) fail("'important' is not an array");
      for (const auto& e : j["important"]) {
        if (!e.is_number_integer()) fail("'important' has a non-integer entry");
        rec.important.push_back(e.get<int>());
      }
    }
    if (rec.paragraphs.empty()) fail("'paragraphs' is empty");
    if (rec.image_paths.empty()) fail("'image_paths' is empty");
    if (rec.image_paths.size() != rec.captions.size()) {
      fail(std::to_string(rec.image_paths.size()) + " image_paths vs " +
           std::to_string(rec.captions.size()) + " captions");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<MultiModalExample> load_examples(const std::filesystem::path& jsonl_path) {
  std::vector<CorpusRecord> records = read_jsonl(jsonl_path);
  std::filesystem::path base = jsonl_path.parent_path();
  std::vector<MultiModalExample> examples;
  examples.reserve(records.size());
  for (auto& rec : records) {
    MultiModalExample ex;
    ex.doc_id = std::move(rec.doc_id);
    ex.paragraphs = std::move(rec.paragraphs);
    ex.captions = std::move(rec.captions);
    ex.summary = std::move(rec.summary);
    ex.important = std::move(rec.important);
    for (const auto& rel : rec.image_paths) {
      std::filesystem::path p(rel);
      ex.images.push_back(read_pgm(p.is_absolute() ? p : base / p));
    }
    examples.push_back(std::move(ex));
  }
  return examples;
}

std::vector<SplitStats> write_corpus(const std::filesystem::path& out_dir,
                                     const SynthConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(out_dir / "images");

  std::vector<CorpusRecord> records;
  records.reserve(static_cast<size_t>(cfg.n_docs));
  for (int i = 0; i < cfg.n_docs; ++i) {
    GeneratedDoc doc = generate_doc(cfg, i);
    CorpusRecord rec;
    rec.doc_id = doc.doc_id;
    rec.paragraphs = std::move(doc.paragraphs);
    rec.captions = std::move(doc.captions);
    rec.summary = std::move(doc.summary);
    rec.important = std::move(doc.important);
    for (size_t m = 0; m < doc.images.size(); ++m) {
      std::string rel = "images/" + doc.doc_id + "_img_" + std::to_string(m) + ".pgm";
      write_pgm(doc.images[m], out_dir / rel);
      rec.image_paths.push_back(rel);
    }
    records.push_back(std::move(rec));
  }

  int n_test = cfg.n_docs / 10;
  int n_val = cfg.n_docs / 10;
  int n_train = cfg.n_docs - n_val - n_test;

  std::vector<SplitStats> stats;
  auto emit = [&](const std::string& name, int begin, int count) {
    std::span<const CorpusRecord> part(records.data() + begin, static_cast<size_t>(count));
    write_jsonl(out_dir / (name + ".jsonl"), part);
    SplitStats st;
    st.name = name;
    st.docs = count;
    for (const auto& rec : part) {
      for (const auto& p : rec.paragraphs) {
        st.avg_tokens += static_cast<double>(tokenize_words(p).size());
      }
      st.avg_images += static_cast<double>(rec.image_paths.size());
    }
    if (count > 0) {
      st.avg_tokens /= count;
      st.avg_images /= count;
    }
    stats.push_back(std::move(st));
  };
  emit("train", 0, n_train);
  emit("val", n_train, n_val);
  emit("test", n_train + n_val, n_test);
  return stats;
}

}  // namespace vilsum
