#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "vilsum/errors.hpp"
#include "vilsum/metrics.hpp"
#include "vilsum/training.hpp"

using namespace vilsum;

namespace {

// Builds a tiny in-memory corpus: every example reuses a small word pool so
// the vocabulary stays compact.
std::vector<MultiModalExample> tiny_corpus(int n, std::mt19937& rng, int n_images = 3) {
  static const std::vector<std::string> pool{"ba", "de", "fi", "go", "ku", "la",
                                            "mo", "nu", "pa", "re", "si", "tu"};
  std::vector<MultiModalExample> out;
  for (int i = 0; i < n; ++i) {
    MultiModalExample ex;
    ex.doc_id = "ex" + std::to_string(i);
    auto word = [&]() { return pool[rng() % pool.size()]; };
    for (int p = 0; p < 3; ++p) {
      ex.paragraphs.push_back(word() + " " + word() + " " + word());
    }
    for (int m = 0; m < n_images; ++m) {
      ex.images.push_back(testutil::random_image(rng, 16));
      ex.captions.push_back(word() + " " + word());
    }
    ex.summary = ex.captions[0] + " " + word();
    out.push_back(std::move(ex));
  }
  return out;
}

ModelConfig tiny_model_config(int vocab_size) {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.tok_layers = 1;
  cfg.vocab_size = vocab_size;
  cfg.patch_size = 8;
  cfg.image_size = 16;
  cfg.max_text_tokens = 64;
  cfg.max_dec_tokens = 16;
  return cfg;
}

Vocab corpus_vocab(const std::vector<MultiModalExample>& corpus) {
  std::vector<std::string> texts;
  for (const auto& ex : corpus) {
    for (const auto& p : ex.paragraphs) texts.push_back(p);
    for (const auto& c : ex.captions) texts.push_back(c);
    texts.push_back(ex.summary);
  }
  return Vocab::build(texts, 512);
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("uniform_index stays in range and in distribution") {
  std::mt19937 rng(401);
  std::vector<int> counts(6, 0);
  const int draws = 60000;
  for (int i = 0; i < draws; ++i) {
    int v = uniform_index(rng, 6);
    REQUIRE(v >= 0);
    REQUIRE(v < 6);
    ++counts[static_cast<size_t>(v)];
  }
  for (int c : counts) {
    CHECK(std::fabs(c / static_cast<double>(draws) - 1.0 / 6.0) < 0.01);
  }
  CHECK(uniform_index(rng, 1) == 0);
  CHECK_THROWS_AS(uniform_index(rng, 0), ContractError);
}

TEST_CASE("uniform_permutation is always a permutation") {
  std::mt19937 rng(402);
  for (int trial = 0; trial < 1000; ++trial) {
    int m = 1 + static_cast<int>(rng() % 10);
    auto perm = uniform_permutation(m, rng);
    std::vector<int> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < m; ++i) REQUIRE(sorted[static_cast<size_t>(i)] == i);
  }
}

TEST_CASE("permutations of three elements are uniform over all six") {
  std::mt19937 rng(403);
  std::map<std::vector<int>, int> counts;
  const int draws = 12000;
  for (int i = 0; i < draws; ++i) ++counts[uniform_permutation(3, rng)];
  REQUIRE(counts.size() == 6);
  for (const auto& [perm, c] : counts) {
    CHECK(std::fabs(c / static_cast<double>(draws) - 1.0 / 6.0) < 0.02);
  }
}

TEST_CASE("selection labels mark the captions matching the summary") {
  std::vector<std::string> captions{"blue sky high", "red fox runs", "green tree tall",
                                    "red fox jumps"};
  auto labels = build_selection_labels(captions, "red fox runs fast", 1);
  REQUIRE(labels.size() == 4);
  CHECK(labels[1] == 1.0f);  // exact 3/4 overlap wins
  CHECK(labels[0] + labels[2] + labels[3] == 0.0f);
}

TEST_CASE("selection label count is min(k, image count)") {
  std::vector<std::string> two{"aa bb", "cc dd"};
  auto labels = build_selection_labels(two, "aa bb cc", 3);
  float sum = 0;
  for (float v : labels) sum += v;
  CHECK(sum == 2.0f);

  std::vector<std::string> five{"a b", "c d", "e f", "g h", "i j"};
  auto l5 = build_selection_labels(five, "a b c d", 3);
  sum = 0;
  for (float v : l5) sum += v;
  CHECK(sum == 3.0f);
}

TEST_CASE("selection ties prefer the earlier caption") {
  std::vector<std::string> captions{"xx yy", "same words", "same words"};
  auto labels = build_selection_labels(captions, "same words", 1);
  CHECK(labels[1] == 1.0f);
  CHECK(labels[2] == 0.0f);
}

TEST_CASE("an untokenizable summary warns and falls back to the first k") {
  std::vector<std::string> captions{"aa", "bb", "cc"};
  auto labels = build_selection_labels(captions, "...", 2);
  CHECK(labels[0] == 1.0f);
  CHECK(labels[1] == 1.0f);
  CHECK(labels[2] == 0.0f);
}

TEST_CASE("shuffle_for_reorder keeps images and inverse maps consistent") {
  std::mt19937 data_rng(404);
  std::vector<ImageGrid> images;
  for (int i = 0; i < 5; ++i) {
    ImageGrid g(2, 2);
    g.at(0, 0) = static_cast<float>(i);  // identify each image by a pixel
    images.push_back(g);
  }
  std::mt19937 rng(405);
  for (int trial = 0; trial < 200; ++trial) {
    ShuffleResult res = shuffle_for_reorder(images, rng);
    REQUIRE(res.images.size() == 5);
    for (int slot = 0; slot < 5; ++slot) {
      int orig = res.reorder_target[static_cast<size_t>(slot)];
      // Image in this slot is the original at index `orig`...
      CHECK(res.images[static_cast<size_t>(slot)].at(0, 0) == static_cast<float>(orig));
      // ...and the inverse map agrees.
      CHECK(res.shuffle_applied[static_cast<size_t>(orig)] == slot);
    }
  }
}

TEST_CASE("a two-image swap yields the expected reorder targets") {
  std::vector<ImageGrid> images;
  for (int i = 0; i < 2; ++i) {
    ImageGrid g(2, 2);
    g.at(0, 0) = static_cast<float>(i);
    images.push_back(g);
  }
  // Find a seed whose first permutation swaps, then verify the label layout.
  for (std::uint32_t seed = 0; seed < 50; ++seed) {
    std::mt19937 rng(seed);
    ShuffleResult res = shuffle_for_reorder(images, rng);
    if (res.images[0].at(0, 0) == 1.0f) {
      CHECK(res.reorder_target == std::vector<int>{1, 0});
      CHECK(res.shuffle_applied == std::vector<int>{1, 0});
      return;
    }
  }
  FAIL("no swapping seed found in 50 tries");
}

TEST_CASE("prepare_example truncates to the model's image capacity") {
  std::mt19937 rng(406);
  auto corpus = tiny_corpus(1, rng, 3);
  MultiModalExample ex = corpus[0];
  // Inflate to 12 images / captions.
  while (ex.images.size() < 12) {
    ex.images.push_back(testutil::random_image(rng, 16));
    ex.captions.push_back("extra words");
  }
  Vocab vocab = corpus_vocab({ex});
  ModelConfig cfg = tiny_model_config(vocab.size());
  PreparedExample prep = prepare_example(ex, vocab, cfg, nullptr);
  CHECK(prep.images.size() == 10);
  CHECK(prep.labels.selection.size() == 10);
  CHECK(prep.labels.reorder_target.size() == 10);
  // Unshuffled: slots keep original order.
  for (int i = 0; i < 10; ++i) CHECK(prep.labels.reorder_target[static_cast<size_t>(i)] == i);
}

TEST_CASE("prepare_example rejects caption/image count mismatches") {
  std::mt19937 rng(407);
  auto corpus = tiny_corpus(1, rng, 3);
  MultiModalExample ex = corpus[0];
  ex.captions.pop_back();
  Vocab vocab = corpus_vocab(corpus);
  ModelConfig cfg = tiny_model_config(vocab.size());
  try {
    prepare_example(ex, vocab, cfg, nullptr);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find(ex.doc_id) != std::string::npos);
  }
}

TEST_CASE("selection bits follow their image through the shuffle") {
  std::mt19937 rng(408);
  auto corpus = tiny_corpus(1, rng, 6);
  MultiModalExample& ex = corpus[0];
  // Make caption 2 the unambiguous match for the summary.
  ex.captions[2] = "zefu qaro wemi";
  ex.summary = "zefu qaro wemi";
  ex.important.clear();
  Vocab vocab = corpus_vocab(corpus);
  ModelConfig cfg = tiny_model_config(vocab.size());

  std::mt19937 shuffle_rng(409);
  for (int trial = 0; trial < 100; ++trial) {
    PreparedExample prep = prepare_example(ex, vocab, cfg, &shuffle_rng, 1);
    int ones = 0;
    for (size_t slot = 0; slot < prep.labels.selection.size(); ++slot) {
      if (prep.labels.selection[slot] == 1.0f) {
        ++ones;
        // The marked slot must hold original image 2.
        CHECK(prep.labels.reorder_target[slot] == 2);
      }
    }
    CHECK(ones == 1);
  }
}

TEST_CASE("gold_selected prefers provided importance annotations") {
  std::mt19937 rng(410);
  auto corpus = tiny_corpus(1, rng, 4);
  MultiModalExample& ex = corpus[0];
  ex.important = {0, 3};
  Vocab vocab = corpus_vocab(corpus);
  ModelConfig cfg = tiny_model_config(vocab.size());
  PreparedExample prep = prepare_example(ex, vocab, cfg, nullptr);
  CHECK(prep.gold_selected == std::vector<int>{0, 3});

  ex.important.clear();
  PreparedExample pseudo = prepare_example(ex, vocab, cfg, nullptr, 2);
  CHECK(pseudo.gold_selected.size() == 2);
}

TEST_CASE("prepared text ids carry sentinels and paragraph spans") {
  std::mt19937 rng(411);
  auto corpus = tiny_corpus(1, rng, 2);
  Vocab vocab = corpus_vocab(corpus);
  ModelConfig cfg = tiny_model_config(vocab.size());
  PreparedExample prep = prepare_example(corpus[0], vocab, cfg, nullptr);
  CHECK(prep.text_ids.front() == Vocab::kStart);
  CHECK(prep.text_ids.back() == Vocab::kEnd);
  CHECK(prep.paragraph_spans.size() == corpus[0].paragraphs.size());
  CHECK(prep.summary_ids.front() == Vocab::kStart);
  CHECK(prep.summary_ids.back() == Vocab::kEnd);
}

TEST_CASE("prepared shapes hold across fifty random examples") {
  std::mt19937 rng(412);
  auto corpus = tiny_corpus(50, rng, 4);
  Vocab vocab = corpus_vocab(corpus);
  ModelConfig cfg = tiny_model_config(vocab.size());
  std::mt19937 shuffle_rng(413);
  for (const auto& ex : corpus) {
    PreparedExample prep = prepare_example(ex, vocab, cfg, &shuffle_rng);
    const size_t m = prep.images.size();
    REQUIRE(m == 4);
    REQUIRE(prep.labels.selection.size() == m);
    REQUIRE(prep.labels.reorder_target.size() == m);
    REQUIRE(prep.labels.shuffle_applied.size() == m);
    // reorder_target is a permutation.
    std::vector<int> sorted = prep.labels.reorder_target;
    std::sort(sorted.begin(), sorted.end());
    for (size_t i = 0; i < m; ++i) REQUIRE(sorted[i] == static_cast<int>(i));
    // selection carries exactly min(3, m) ones.
    int ones = 0;
    for (float v : prep.labels.selection) {
      REQUIRE((v == 0.0f || v == 1.0f));
      if (v == 1.0f) ++ones;
    }
    REQUIRE(ones == 3);
  }
}

TEST_CASE("train_step updates parameters and reports finite losses") {
  std::mt19937 rng(414);
  auto corpus = tiny_corpus(4, rng, 2);
  Vocab vocab = corpus_vocab(corpus);
  ModelConfig cfg = tiny_model_config(vocab.size());
  Model model(cfg, 414);
  AdamConfig ac;
  ac.base_lr = 1e-3f;
  ac.warmup_steps = 1;
  AdamOptimizer opt(ac);
  TaskFlags tasks;
  tasks.sel = tasks.reo = true;

  std::vector<PreparedExample> batch;
  std::mt19937 shuffle_rng(415);
  for (const auto& ex : corpus) {
    batch.push_back(prepare_example(ex, vocab, cfg, &shuffle_rng));
  }
  Tensor before = model.params().get("emb.tok");
  StepResult r = train_step(model, opt, batch, tasks);
  CHECK(r.step == 1);
  REQUIRE(r.gen.has_value());
  REQUIRE(r.sel.has_value());
  REQUIRE(r.reo.has_value());
  CHECK(std::isfinite(*r.gen));
  CHECK(std::isfinite(r.total));
  CHECK(*r.gen == doctest::Approx(std::log(static_cast<double>(vocab.size()))).epsilon(0.2));
  CHECK(*r.sel == doctest::Approx(std::log(2.0)).epsilon(0.2));
  CHECK(*r.reo == doctest::Approx(std::log(10.0)).epsilon(0.2));
  const Tensor& after = model.params().get("emb.tok");
  bool changed = !std::equal(before.data().begin(), before.data().end(), after.data().begin());
  CHECK(changed);
}

TEST_CASE("generation-only flags leave the other losses empty") {
  std::mt19937 rng(416);
  auto corpus = tiny_corpus(2, rng, 2);
  Vocab vocab = corpus_vocab(corpus);
  ModelConfig cfg = tiny_model_config(vocab.size());
  Model model(cfg, 416);
  AdamOptimizer opt(AdamConfig{});
  TaskFlags gen_only;

  std::vector<PreparedExample> batch;
  for (const auto& ex : corpus) batch.push_back(prepare_example(ex, vocab, cfg, nullptr));
  StepResult r = train_step(model, opt, batch, gen_only);
  CHECK(r.gen.has_value());
  CHECK_FALSE(r.sel.has_value());
  CHECK_FALSE(r.reo.has_value());
}

TEST_CASE("loss decreases when memorizing a small fixed set") {
  std::mt19937 rng(417);
  auto corpus = tiny_corpus(8, rng, 2);
  Vocab vocab = corpus_vocab(corpus);
  ModelConfig cfg = tiny_model_config(vocab.size());
  cfg.d_model = 16;
  Model model(cfg, 417);
  AdamConfig ac;
  ac.base_lr = 3e-3f;
  ac.warmup_steps = 10;
  AdamOptimizer opt(ac);
  TaskFlags tasks;
  tasks.sel = tasks.reo = true;
  Trainer trainer(model, opt, vocab, corpus, 4, 417, tasks);

  auto avg_total = [&](const std::vector<StepResult>& rs, size_t from, size_t to) {
    double s = 0;
    for (size_t i = from; i < to; ++i) s += rs[i].total;
    return s / (to - from);
  };
  std::vector<StepResult> results = trainer.run_steps(200);
  double head = avg_total(results, 0, 10);
  double tail = avg_total(results, 190, 200);
  CAPTURE(head);
  CAPTURE(tail);
  CHECK(tail < 0.6 * head);
}

TEST_CASE("same-seed trainers produce bitwise identical trajectories") {
  std::mt19937 rng(418);
  auto corpus = tiny_corpus(6, rng, 2);
  Vocab vocab = corpus_vocab(corpus);
  ModelConfig cfg = tiny_model_config(vocab.size());

  auto run = [&]() {
    Model model(cfg, 418);
    AdamOptimizer opt(AdamConfig{});
    TaskFlags tasks;
    tasks.sel = tasks.reo = true;
    Trainer trainer(model, opt, vocab, corpus, 3, 99, tasks);
    trainer.run_steps(12);
    std::vector<float> flat;
    for (const auto& [name, t] : model.params().items()) {
      flat.insert(flat.end(), t.data().begin(), t.data().end());
    }
    return flat;
  };
  CHECK(run() == run());
}

TEST_CASE("different trainer seeds give different trajectories") {
  std::mt19937 rng(419);
  auto corpus = tiny_corpus(6, rng, 2);
  Vocab vocab = corpus_vocab(corpus);
  ModelConfig cfg = tiny_model_config(vocab.size());

  auto run = [&](long seed) {
    Model model(cfg, 419);
    AdamOptimizer opt(AdamConfig{});
    TaskFlags tasks;
    Trainer trainer(model, opt, vocab, corpus, 3, seed, tasks);
    trainer.run_steps(6);
    std::vector<float> flat;
    for (const auto& [name, t] : model.params().items()) {
      flat.insert(flat.end(), t.data().begin(), t.data().end());
    }
    return flat;
  };
  CHECK(run(1) != run(2));
}

TEST_CASE("optimizer refuses to step without gradients") {
  ParamStore store;
  std::mt19937 rng(420);
  store.add("w", Tensor::randn({4, 4}, rng, 0.1f));
  AdamOptimizer opt(AdamConfig{});
  CHECK_THROWS_AS(opt.step(store), ContractError);
}

TEST_CASE("warmup ramps the learning rate linearly") {
  CHECK(warmup_lr(0, 1.0f, 10) == doctest::Approx(0.0f));
  CHECK(warmup_lr(5, 1.0f, 10) == doctest::Approx(0.5f));
  CHECK(warmup_lr(10, 1.0f, 10) == doctest::Approx(1.0f));
  CHECK(warmup_lr(500, 1.0f, 10) == doctest::Approx(1.0f));
}

TEST_CASE("adam only updates parameters whose loss produced gradients") {
  ParamStore store;
  std::mt19937 rng(421);
  Tensor& used = store.add("used", Tensor::randn({2, 2}, rng, 0.5f));
  Tensor& unused = store.add("unused", Tensor::randn({2, 2}, rng, 0.5f));
  std::vector<float> unused_before(unused.data().begin(), unused.data().end());

  Tape tape;
  std::vector<int> targets{0, 1};
  tape.backward(tape.cross_entropy(tape.leaf(used), targets));
  AdamConfig ac;
  ac.warmup_steps = 1;
  AdamOptimizer opt(ac);
  opt.step(store);

  CHECK(std::equal(unused.data().begin(), unused.data().end(), unused_before.begin()));
  CHECK(opt.moments().count("used") == 1);
  CHECK(opt.moments().count("unused") == 0);
}

TEST_CASE("batch size larger than the train set is clamped") {
  std::mt19937 rng(422);
  auto corpus = tiny_corpus(2, rng, 2);
  Vocab vocab = corpus_vocab(corpus);
  ModelConfig cfg = tiny_model_config(vocab.size());
  Model model(cfg, 422);
  AdamOptimizer opt(AdamConfig{});
  TaskFlags tasks;
  Trainer trainer(model, opt, vocab, corpus, 64, 1, tasks);
  CHECK(trainer.steps_per_epoch() == 1);
  CHECK_NOTHROW(trainer.step_once());
}

}  // TEST_SUITE
