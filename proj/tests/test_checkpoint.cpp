#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "vilsum/checkpoint.hpp"
#include "vilsum/errors.hpp"
#include "vilsum/run_config.hpp"
#include "vilsum/training.hpp"

using namespace vilsum;

namespace {

CheckpointData sample_data(std::mt19937& rng) {
  CheckpointData data;
  data.config["mode"] = "joint";
  data.config["seed"] = "7";
  data.config["note"] = "with spaces and = signs";
  data.tensors.emplace_back("alpha", Tensor::randn({3, 4}, rng, 1.0f));
  data.tensors.emplace_back("beta", Tensor::randn({7}, rng, 1.0f));
  data.tensors.emplace_back("gamma.delta", Tensor::randn({2, 2, 2}, rng, 1.0f));
  return data;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void dump(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("checkpoint round-trips bitwise") {
  testutil::TempDir tmp;
  std::mt19937 rng(501);
  CheckpointData data = sample_data(rng);
  auto path = tmp / "a.ckpt";
  save_checkpoint(path, data);
  CheckpointData back = load_checkpoint(path);

  CHECK(back.config == data.config);
  REQUIRE(back.tensors.size() == data.tensors.size());
  for (size_t i = 0; i < data.tensors.size(); ++i) {
    CHECK(back.tensors[i].first == data.tensors[i].first);
    CHECK(back.tensors[i].second.shape() == data.tensors[i].second.shape());
    CHECK(std::equal(back.tensors[i].second.data().begin(), back.tensors[i].second.data().end(),
                     data.tensors[i].second.data().begin()));
  }
  // Saving the loaded copy yields identical bytes (canonical encoding).
  auto path2 = tmp / "b.ckpt";
  save_checkpoint(path2, back);
  CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("wrong magic is reported as BadMagic") {
  testutil::TempDir tmp;
  auto path = tmp / "bad.ckpt";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE" << std::string(64, '\0');
  }
  try {
    load_checkpoint(path);
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointError::Kind::BadMagic);
  }
}

TEST_CASE("future versions are reported as VersionMismatch") {
  testutil::TempDir tmp;
  std::mt19937 rng(502);
  auto path = tmp / "v.ckpt";
  save_checkpoint(path, sample_data(rng));
  auto bytes = slurp(path);
  bytes[4] = static_cast<char>(kCheckpointVersion + 1);  // little-endian u32 version
  dump(path, bytes);
  try {
    load_checkpoint(path);
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointError::Kind::VersionMismatch);
  }
}

TEST_CASE("flipped payload bytes are reported as Corrupt") {
  testutil::TempDir tmp;
  std::mt19937 rng(503);
  auto path = tmp / "c.ckpt";
  save_checkpoint(path, sample_data(rng));
  auto bytes = slurp(path);
  bytes[bytes.size() / 2] ^= 0x40;
  dump(path, bytes);
  try {
    load_checkpoint(path);
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointError::Kind::Corrupt);
  }
}

TEST_CASE("truncated files are reported as Corrupt") {
  testutil::TempDir tmp;
  std::mt19937 rng(504);
  auto path = tmp / "t.ckpt";
  save_checkpoint(path, sample_data(rng));
  auto bytes = slurp(path);
  for (size_t keep : {bytes.size() - 1, bytes.size() / 2, size_t{9}}) {
    auto cut = bytes;
    cut.resize(keep);
    dump(path, cut);
    try {
      load_checkpoint(path);
      FAIL("expected CheckpointError at size ", keep);
    } catch (const CheckpointError& e) {
      CHECK(e.kind() == CheckpointError::Kind::Corrupt);
    }
  }
}

TEST_CASE("a missing file raises IoError, not CheckpointError") {
  testutil::TempDir tmp;
  CHECK_THROWS_AS(load_checkpoint(tmp / "absent.ckpt"), IoError);
}

TEST_CASE("a failed save leaves no partial file behind") {
  testutil::TempDir tmp;
  std::mt19937 rng(505);
  // Writing into a directory that does not exist must fail...
  auto path = tmp / "no_such_dir" / "x.ckpt";
  CHECK_THROWS_AS(save_checkpoint(path, sample_data(rng)), IoError);
  // ...and must not leave temp files in the parent either.
  size_t entries = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(tmp.path)) ++entries;
  CHECK(entries == 0);
}

TEST_CASE("session save/load restores a training run exactly") {
  testutil::TempDir tmp;
  std::mt19937 rng(506);

  // Build a miniature run: corpus, model, a few optimizer steps.
  std::vector<std::string> texts{"ba de fi go", "ku la mo nu", "pa re si tu"};
  Vocab vocab = Vocab::build(texts, 64);
  RunConfig run;
  run.d_model = 8;
  run.n_heads = 2;
  run.enc_layers = 1;
  run.dec_layers = 1;
  run.image_size = 16;
  run.patch_size = 8;
  run.seed = 42;
  run.tasks = "gen,sel,reo";
  Model model(model_config_from(run, vocab.size()), 42);

  AdamConfig ac;
  ac.base_lr = run.lr;
  ac.warmup_steps = run.warmup_steps;
  AdamOptimizer opt(ac);
  // Fake some training: give every parameter a gradient and step twice.
  for (int it = 0; it < 2; ++it) {
    for (auto& [name, t] : model.params().items()) {
      t.ensure_grad();
      for (auto& g : t.grad()) g = 0.01f * static_cast<float>(testutil::unit_draw(rng) - 0.5f);
    }
    opt.step(model.params());
  }

  auto path = tmp / "session.ckpt";
  save_session(path, model, opt, run, vocab, "rngstate");
  LoadedSession session = load_session(path);

  CHECK(session.step == 2);
  CHECK(session.rng_state == "rngstate");
  CHECK(session.run.to_map() == run.to_map());
  CHECK(session.vocab.size() == vocab.size());
  for (int id = 0; id < vocab.size(); ++id) {
    CHECK(session.vocab.token_of(id) == vocab.token_of(id));
  }
  for (const auto& [name, t] : model.params().items()) {
    const Tensor& loaded = session.model->params().get(name);
    REQUIRE(loaded.shape() == t.shape());
    CHECK(std::equal(loaded.data().begin(), loaded.data().end(), t.data().begin()));
  }
  REQUIRE(session.moments.size() == opt.moments().size());
  for (const auto& [name, mom] : opt.moments()) {
    REQUIRE(session.moments.count(name) == 1);
    CHECK(session.moments.at(name).m == mom.m);
    CHECK(session.moments.at(name).v == mom.v);
  }

  // The restored optimizer continues from the same step count.
  AdamOptimizer opt2 = session.make_optimizer();
  CHECK(opt2.step_count() == 2);
  CHECK(opt2.config().base_lr == ac.base_lr);
}

TEST_CASE("loaded sessions produce bitwise identical forward passes") {
  testutil::TempDir tmp;
  RunConfig run;
  run.d_model = 8;
  run.n_heads = 2;
  run.enc_layers = 1;
  run.dec_layers = 1;
  run.image_size = 16;
  run.patch_size = 8;
  run.seed = 507;
  Vocab vocab = Vocab::build({"ba de fi go ku la mo"}, 12);
  Model model(model_config_from(run, vocab.size()), 507);
  AdamOptimizer opt(AdamConfig{});

  std::mt19937 rng(507);
  std::vector<ImageGrid> images{testutil::random_image(rng, 16), testutil::random_image(rng, 16)};
  std::vector<int> text_ids{Vocab::kStart, 5, 6, 7, Vocab::kEnd};
  std::vector<int> summary_ids{Vocab::kStart, 6, 5, Vocab::kEnd};

  auto path = tmp / "fw.ckpt";
  save_session(path, model, opt, run, vocab, "none");
  LoadedSession session = load_session(path);

  Tape t1, t2;
  Var l1 = model.generation_loss(t1, model.encode(t1, images, text_ids), summary_ids);
  Var l2 = session.model->generation_loss(t2, session.model->encode(t2, images, text_ids),
                                          summary_ids);
  CHECK(t1.val(l1)[0] == t2.val(l2)[0]);
}

TEST_CASE("sessions with missing tensors are rejected as Corrupt") {
  testutil::TempDir tmp;
  RunConfig run;
  run.d_model = 8;
  run.n_heads = 2;
  run.enc_layers = 1;
  run.dec_layers = 1;
  run.image_size = 16;
  run.patch_size = 8;
  run.seed = 508;
  Vocab vocab = Vocab::build({"ba de fi"}, 12);
  Model model(model_config_from(run, vocab.size()), 508);
  AdamOptimizer opt(AdamConfig{});
  auto path = tmp / "m.ckpt";
  save_session(path, model, opt, run, vocab, "none");

  // Drop one tensor record through the low-level API and re-save.
  CheckpointData data = load_checkpoint(path);
  data.tensors.erase(data.tensors.begin() + 5);
  save_checkpoint(path, data);
  try {
    load_session(path);
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointError::Kind::Corrupt);
  }
}

}  // TEST_SUITE
