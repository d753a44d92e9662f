#include <benchmark/benchmark.h>

#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "vilsum/adam.hpp"
#include "vilsum/beam.hpp"
#include "vilsum/metrics.hpp"
#include "vilsum/model.hpp"
#include "vilsum/synth.hpp"
#include "vilsum/tape.hpp"
#include "vilsum/tensor.hpp"
#include "vilsum/text.hpp"
#include "vilsum/training.hpp"

namespace {

using namespace vilsum;

// A small trained-from-scratch setup shared by the end-to-end benchmarks:
// eight generated documents, a vocabulary over them, and a compact model.
struct Workbench {
  ModelConfig cfg;
  std::unique_ptr<Vocab> vocab;
  std::unique_ptr<Model> model;
  std::vector<PreparedExample> batch;

  Workbench() {
    SynthConfig synth;
    synth.n_docs = 10;
    synth.seed = 7;

    std::vector<MultiModalExample> docs;
    std::vector<std::string> texts;
    for (int i = 0; i < 8; ++i) {
      GeneratedDoc d = generate_doc(synth, i);
      texts.insert(texts.end(), d.paragraphs.begin(), d.paragraphs.end());
      texts.push_back(d.summary);
      docs.push_back({d.doc_id, d.paragraphs, d.images, d.captions, d.summary, d.important});
    }
    vocab = std::make_unique<Vocab>(Vocab::build(texts, 512));

    cfg.d_model = 64;
    cfg.n_heads = 4;
    cfg.enc_layers = 2;
    cfg.dec_layers = 2;
    cfg.vocab_size = vocab->size();
    cfg.image_size = synth.image_size;
    model = std::make_unique<Model>(cfg, 1234);

    std::mt19937 shuffle(99);
    for (const auto& doc : docs) {
      batch.push_back(prepare_example(doc, *vocab, cfg, &shuffle));
    }
  }
};

Workbench& bench_fixture() {
  static Workbench wb;
  return wb;
}

void BM_TapeMatmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937 rng(1);
  Tensor a = Tensor::randn({n, n}, rng, 1.0f);
  Tensor b = Tensor::randn({n, n}, rng, 1.0f);
  for (auto _ : state) {
    Tape tape;
    Var c = tape.matmul(tape.leaf(a), tape.leaf(b));
    benchmark::DoNotOptimize(tape.val(c).data().data());
  }
  state.SetItemsProcessed(state.iterations() * 2L * n * n * n);
}
BENCHMARK(BM_TapeMatmul)->Arg(32)->Arg(64)->Arg(128);

void BM_Attention(benchmark::State& state) {
  const int t = static_cast<int>(state.range(0));
  const int d = 64;
  std::mt19937 rng(2);
  Tensor x = Tensor::randn({t, d}, rng, 0.5f);
  for (auto _ : state) {
    Tape tape;
    Var q = tape.leaf(x);
    Var out = tape.attention(q, q, q, 4);
    benchmark::DoNotOptimize(tape.val(out).data().data());
  }
  state.SetItemsProcessed(state.iterations() * t);
}
BENCHMARK(BM_Attention)->Arg(16)->Arg(64)->Arg(256);

void BM_RougeL(benchmark::State& state) {
  const int words = static_cast<int>(state.range(0));
  const auto& pool = synth_word_pool();
  std::mt19937 rng(3);
  auto sentence = [&] {
    std::ostringstream out;
    for (int i = 0; i < words; ++i) {
      if (i) out << ' ';
      out << pool[rng() % pool.size()];
    }
    return out.str();
  };
  std::string a = sentence(), b = sentence();
  for (auto _ : state) {
    RougeScore s = rouge_l(a, b);
    benchmark::DoNotOptimize(s.f1);
  }
  state.SetItemsProcessed(state.iterations() * words);
}
BENCHMARK(BM_RougeL)->Arg(16)->Arg(64)->Arg(256);

void BM_EncodeForward(benchmark::State& state) {
  Workbench& wb = bench_fixture();
  const PreparedExample& ex = wb.batch.front();
  for (auto _ : state) {
    Tape tape;
    EncoderOutput enc = wb.model->encode(tape, ex.images, ex.text_ids);
    benchmark::DoNotOptimize(tape.val(enc.hidden).data().data());
  }
}
BENCHMARK(BM_EncodeForward);

void BM_TrainStep(benchmark::State& state) {
  Workbench& wb = bench_fixture();
  AdamConfig acfg;
  acfg.base_lr = 1e-4f;
  acfg.warmup_steps = 10;
  AdamOptimizer opt(acfg);
  TaskFlags tasks = TaskFlags::parse("gen,sel,reo");
  for (auto _ : state) {
    StepResult res = train_step(*wb.model, opt, {wb.batch.data(), 4}, tasks);
    benchmark::DoNotOptimize(res.total);
  }
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_TrainStep);

void BM_BeamSearch(benchmark::State& state) {
  Workbench& wb = bench_fixture();
  const PreparedExample& ex = wb.batch.front();
  BeamParams bp;
  bp.beam_size = static_cast<int>(state.range(0));
  bp.min_len = 5;
  bp.max_len = 15;
  for (auto _ : state) {
    Tape tape;
    EncoderOutput enc = wb.model->encode(tape, ex.images, ex.text_ids);
    std::vector<int> ids = beam_search(*wb.model, tape, enc, bp);
    benchmark::DoNotOptimize(ids.data());
  }
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(3);

}  // namespace

BENCHMARK_MAIN();
