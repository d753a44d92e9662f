#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "vilsum/image.hpp"
#include "vilsum/model.hpp"
#include "vilsum/tape.hpp"
#include "vilsum/text.hpp"

namespace testutil {

/// Self-deleting unique temporary directory.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "vilsum_test_XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
    path = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

inline float unit_draw(std::mt19937& rng) {
  return static_cast<float>(rng() >> 8) * (1.0f / 16777216.0f);
}

inline vilsum::ImageGrid random_image(std::mt19937& rng, int size = 16) {
  vilsum::ImageGrid g;
  g.h = size;
  g.w = size;
  g.pixels.resize(static_cast<size_t>(size) * size);
  for (auto& p : g.pixels) p = unit_draw(rng);
  return g;
}

/// Small model plus one synthetic example, used by gradient and beam tests.
struct ToyFixture {
  vilsum::ModelConfig cfg;
  std::unique_ptr<vilsum::Model> model;
  std::vector<vilsum::ImageGrid> images;
  std::vector<int> text_ids;      // START ... END
  std::vector<int> summary_ids;   // START ... END
  std::vector<int> reorder;       // original positions
  std::vector<float> selection;   // per-image bits
};

inline ToyFixture make_toy(std::uint32_t seed, int vocab_size = 12, int n_images = 2,
                           vilsum::Mode mode = vilsum::Mode::joint) {
  ToyFixture fx;
  fx.cfg.d_model = 8;
  fx.cfg.n_heads = 2;
  fx.cfg.enc_layers = 1;
  fx.cfg.dec_layers = 1;
  fx.cfg.tok_layers = 1;
  fx.cfg.vocab_size = vocab_size;
  fx.cfg.patch_size = 8;
  fx.cfg.image_size = 16;
  fx.cfg.max_text_tokens = 16;
  fx.cfg.max_dec_tokens = 12;
  fx.cfg.mode = mode;
  fx.model = std::make_unique<vilsum::Model>(fx.cfg, seed);

  std::mt19937 rng(seed ^ 0x9E3779B9u);
  for (int m = 0; m < n_images; ++m) fx.images.push_back(random_image(rng, fx.cfg.image_size));

  auto content = [&](int n) {
    std::vector<int> ids{vilsum::Vocab::kStart};
    for (int i = 0; i < n; ++i) {
      ids.push_back(vilsum::Vocab::kReserved +
                    static_cast<int>(rng() % (vocab_size - vilsum::Vocab::kReserved)));
    }
    ids.push_back(vilsum::Vocab::kEnd);
    return ids;
  };
  fx.text_ids = content(6);
  fx.summary_ids = content(3);
  for (int m = 0; m < n_images; ++m) fx.reorder.push_back(n_images - 1 - m);
  for (int m = 0; m < n_images; ++m) fx.selection.push_back(m % 2 == 0 ? 1.0f : 0.0f);
  return fx;
}

/// Finite-difference check against analytic gradients already stored in
/// the parameter store. Float32 forward noise puts an absolute floor of
/// roughly 5e-4 on the difference at h=1e-3, so the pass rule is
/// |analytic - fd| <= atol + rtol * max(|analytic|, |fd|) with the central
/// difference. The max-pool in the image tokenizer makes the loss piecewise
/// smooth; when a probe straddles an argmax crossing the central difference
/// blends two branches, but the analytic subgradient must then equal one of
/// the one-sided slopes, so those are accepted as a fallback (and counted in
/// `kinks`). max_rel_big reports the classic relative error over components
/// larger than 0.5.
struct FdReport {
  double max_abs = 0.0;
  double max_rel_big = 0.0;
  int checked = 0;
  int failures = 0;
  int kinks = 0;  // components that only passed via a one-sided slope
  bool ok() const { return checked > 0 && failures == 0; }
};

template <typename LossFn>
FdReport fd_check(vilsum::ParamStore& params, const LossFn& loss, int stride,
                  float h = 1e-3f, double atol = 5e-4, double rtol = 1e-3) {
  FdReport rep;
  const auto within = [&](double a, double b) {
    return std::fabs(a - b) <= atol + rtol * std::max(std::fabs(a), std::fabs(b));
  };
  for (auto& [name, t] : params.items()) {
    if (!t.has_grad()) continue;
    for (size_t i = 0; i < t.size(); i += static_cast<size_t>(stride)) {
      const float saved = t.data()[i];
      const double an = t.grad()[i];
      t.data()[i] = saved + h;
      const double lp = loss();
      t.data()[i] = saved - h;
      const double lm = loss();
      t.data()[i] = saved;
      const double central = (lp - lm) / (2.0 * static_cast<double>(h));
      double err = std::fabs(an - central);
      double mag = std::max(std::fabs(an), std::fabs(central));
      bool passed = within(an, central);
      if (!passed) {
        const double l0 = loss();
        for (double side : {(lp - l0) / h, (l0 - lm) / h}) {
          if (within(an, side)) {
            passed = true;
            ++rep.kinks;
            err = std::fabs(an - side);
            mag = std::max(std::fabs(an), std::fabs(side));
            break;
          }
        }
      }
      ++rep.checked;
      rep.max_abs = std::max(rep.max_abs, err);
      if (mag > 0.5) rep.max_rel_big = std::max(rep.max_rel_big, err / mag);
      if (!passed) ++rep.failures;
    }
  }
  return rep;
}

}  // namespace testutil
