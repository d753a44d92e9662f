#include "vilsum/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

#include "vilsum/checkpoint.hpp"
#include "vilsum/errors.hpp"
#include "vilsum/metrics.hpp"

namespace vilsum {

int uniform_index(std::mt19937& rng, int n) {
  if (n <= 0) throw ContractError("uniform_index: n must be positive");
  auto un = static_cast<std::uint32_t>(n);
  std::uint32_t limit = std::numeric_limits<std::uint32_t>::max() -
                        std::numeric_limits<std::uint32_t>::max() % un;
  std::uint32_t r = rng();
  while (r >= limit) r = rng();
  return static_cast<int>(r % un);
}

std::vector<int> uniform_permutation(int m, std::mt19937& rng) {
  std::vector<int> p(static_cast<size_t>(m));
  std::iota(p.begin(), p.end(), 0);
  for (int i = m - 1; i > 0; --i) {
    int j = uniform_index(rng, i + 1);
    std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
  }
  return p;
}

std::vector<float> build_selection_labels(const std::vector<std::string>& captions,
                                          const std::string& summary, int k) {
  if (captions.empty()) throw ContractError("build_selection_labels: no captions");
  if (k < 1) throw ContractError("build_selection_labels: k must be >= 1");
  int m = static_cast<int>(captions.size());
  int take = std::min(k, m);
  std::vector<float> bits(static_cast<size_t>(m), 0.0f);

  if (tokenize_words(summary).empty()) {
    std::cerr << "warning: empty summary for selection labels; marking the first " << take
              << " captions\n";
    for (int i = 0; i < take; ++i) bits[static_cast<size_t>(i)] = 1.0f;
    return bits;
  }

  std::vector<double> scores(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    const std::string& cap = captions[static_cast<size_t>(i)];
    scores[static_cast<size_t>(i)] = (rouge_n(cap, summary, 1).f1 + rouge_n(cap, summary, 2).f1 +
                                      rouge_l(cap, summary).f1) /
                                     3.0;
  }
  std::vector<int> order(static_cast<size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    double sa = scores[static_cast<size_t>(a)], sb = scores[static_cast<size_t>(b)];
    if (sa != sb) return sa > sb;
    return a < b;
  });
  for (int i = 0; i < take; ++i) bits[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1.0f;
  return bits;
}

ShuffleResult shuffle_for_reorder(const std::vector<ImageGrid>& images, std::mt19937& rng) {
  int m = static_cast<int>(images.size());
  if (m < 1) throw ContractError("shuffle_for_reorder: need at least one image");
  std::vector<int> src = uniform_permutation(m, rng);  // slot j holds original src[j]
  ShuffleResult res;
  res.images.reserve(static_cast<size_t>(m));
  res.reorder_target = src;
  res.shuffle_applied.assign(static_cast<size_t>(m), 0);
  for (int j = 0; j < m; ++j) {
    res.images.push_back(images[static_cast<size_t>(src[static_cast<size_t>(j)])]);
    res.shuffle_applied[static_cast<size_t>(src[static_cast<size_t>(j)])] = j;
  }
  return res;
}

PreparedExample prepare_example(const MultiModalExample& ex, const Vocab& vocab,
                                const ModelConfig& cfg, std::mt19937* shuffle_rng,
                                int k_select) {
  if (ex.images.empty()) throw ContractError("prepare_example: example has no images");
  if (ex.images.size() != ex.captions.size()) {
    throw ContractError("prepare_example: " + std::to_string(ex.images.size()) + " images vs " +
                        std::to_string(ex.captions.size()) + " captions in " + ex.doc_id);
  }
  int m = std::min<int>(static_cast<int>(ex.images.size()), ModelConfig::kMaxImages);

  PreparedExample prep;
  prep.text_ids = vocab.encode_paragraphs(ex.paragraphs, cfg.max_text_tokens,
                                          &prep.paragraph_spans);
  prep.summary_ids = vocab.encode(ex.summary, cfg.max_dec_tokens);

  std::vector<ImageGrid> images(ex.images.begin(), ex.images.begin() + m);
  std::vector<std::string> captions(ex.captions.begin(), ex.captions.begin() + m);
  std::vector<float> bits = build_selection_labels(captions, ex.summary, k_select);

  if (!ex.important.empty()) {
    for (int idx : ex.important) {
      if (idx >= 0 && idx < m) prep.gold_selected.push_back(idx);
    }
  } else {
    for (int i = 0; i < m; ++i) {
      if (bits[static_cast<size_t>(i)] > 0.5f) prep.gold_selected.push_back(i);
    }
  }

  if (shuffle_rng) {
    ShuffleResult sh = shuffle_for_reorder(images, *shuffle_rng);
    prep.images = std::move(sh.images);
    prep.labels.reorder_target = std::move(sh.reorder_target);
    prep.labels.shuffle_applied = std::move(sh.shuffle_applied);
    prep.labels.selection.resize(static_cast<size_t>(m));
    for (int j = 0; j < m; ++j) {
      prep.labels.selection[static_cast<size_t>(j)] =
          bits[static_cast<size_t>(prep.labels.reorder_target[static_cast<size_t>(j)])];
    }
  } else {
    prep.images = std::move(images);
    prep.labels.selection = std::move(bits);
    prep.labels.reorder_target.resize(static_cast<size_t>(m));
    std::iota(prep.labels.reorder_target.begin(), prep.labels.reorder_target.end(), 0);
    prep.labels.shuffle_applied = prep.labels.reorder_target;
  }
  return prep;
}

StepResult train_step(Model& model, AdamOptimizer& opt,
                      std::span<const PreparedExample> batch, TaskFlags tasks) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  model.params().drop_grads();
  double sum_gen = 0, sum_sel = 0, sum_reo = 0, sum_total = 0;
  float inv = 1.0f / static_cast<float>(batch.size());
  for (const auto& ex : batch) {
    Tape tape;
    EncoderOutput enc = model.encode(tape, ex.images, ex.text_ids);
    LossParts lp = model.total_loss(tape, enc, ex.summary_ids, ex.labels.reorder_target,
                                    ex.labels.selection, tasks);
    tape.backward(tape.scale(lp.total, inv));
    sum_total += tape.val(lp.total)[0];
    if (tasks.gen) sum_gen += tape.val(lp.gen)[0];
    if (tasks.sel) sum_sel += tape.val(lp.sel)[0];
    if (tasks.reo) sum_reo += tape.val(lp.reo)[0];
  }
  auto mean = [&](double sum) { return static_cast<float>(sum / static_cast<double>(batch.size())); };

  StepResult r;
  r.total = mean(sum_total);
  if (tasks.gen) r.gen = mean(sum_gen);
  if (tasks.sel) r.sel = mean(sum_sel);
  if (tasks.reo) r.reo = mean(sum_reo);
  if (!std::isfinite(r.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << (opt.step_count() + 1) << ": total=" << r.total;
    if (r.gen) msg << " gen=" << *r.gen;
    if (r.sel) msg << " sel=" << *r.sel;
    if (r.reo) msg << " reo=" << *r.reo;
    throw TrainingError(msg.str());
  }
  opt.step(model.params());
  r.step = opt.step_count();
  return r;
}

Trainer::Trainer(Model& model, AdamOptimizer& opt, const Vocab& vocab,
                 std::vector<MultiModalExample> train_set, int batch_size, long seed,
                 TaskFlags tasks)
    : model_(model),
      opt_(opt),
      vocab_(vocab),
      train_(std::move(train_set)),
      batch_size_(batch_size),
      seed_(seed),
      tasks_(tasks) {
  if (train_.empty()) throw ContractError("trainer: empty training set");
  if (batch_size_ < 1) throw ContractError("trainer: batch_size must be >= 1");
  if (batch_size_ > static_cast<int>(train_.size())) {
    std::cerr << "note: batch_size " << batch_size_ << " clamped to the " << train_.size()
              << "-example training set\n";
    batch_size_ = static_cast<int>(train_.size());
  }
  steps_per_epoch_ = static_cast<long>(train_.size()) / batch_size_;
}

long Trainer::step() const { return opt_.step_count(); }

std::vector<size_t> Trainer::epoch_order(long epoch) const {
  std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(epoch),
                    0x5EEDu};
  std::mt19937 rng(seq);
  std::vector<int> perm = uniform_permutation(static_cast<int>(train_.size()), rng);
  return std::vector<size_t>(perm.begin(), perm.end());
}

StepResult Trainer::step_once() {
  long s = opt_.step_count();
  long epoch = s / steps_per_epoch_;
  long pos = s % steps_per_epoch_;
  std::vector<size_t> order = epoch_order(epoch);

  std::vector<PreparedExample> batch;
  batch.reserve(static_cast<size_t>(batch_size_));
  for (int b = 0; b < batch_size_; ++b) {
    size_t idx = order[static_cast<size_t>(pos * batch_size_ + b)];
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(epoch),
                      static_cast<std::uint32_t>(idx), 0x51F7u};
    std::mt19937 ex_rng(seq);
    batch.push_back(prepare_example(train_[idx], vocab_, model_.config(), &ex_rng,
                                    model_.config().k_select));
  }
  return train_step(model_, opt_, batch, tasks_);
}

std::vector<StepResult> Trainer::run_steps(long n) {
  std::vector<StepResult> results;
  results.reserve(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) results.push_back(step_once());
  return results;
}

ModelConfig model_config_from(const RunConfig& run, int vocab_size) {
  run.validate();
  ModelConfig cfg;
  cfg.d_model = run.d_model;
  cfg.n_heads = run.n_heads;
  cfg.enc_layers = run.enc_layers;
  cfg.dec_layers = run.dec_layers;
  cfg.vocab_size = vocab_size;
  cfg.patch_size = run.patch_size;
  cfg.image_size = run.image_size;
  cfg.k_select = run.k_select;
  cfg.mode = parse_mode(run.mode);
  return cfg;
}

namespace {

std::string encode_vocab_line(const Vocab& vocab) {
  std::string s = vocab.serialize();
  std::replace(s.begin(), s.end(), '\n', ';');
  return s;
}

Vocab decode_vocab_line(const std::string& line) {
  std::string s = line;
  std::replace(s.begin(), s.end(), ';', '\n');
  return Vocab::deserialize(s);
}

}  // namespace

void save_session(const std::filesystem::path& path, const Model& model,
                  const AdamOptimizer& opt, const RunConfig& run, const Vocab& vocab,
                  const std::string& rng_state) {
  CheckpointData data;
  data.config = run.to_map();
  data.config["step"] = std::to_string(opt.step_count());
  data.config["rng"] = rng_state;
  data.config["vocab"] = encode_vocab_line(vocab);

  for (const auto& [name, tensor] : model.params().items()) {
    data.tensors.emplace_back(name, tensor);
  }
  for (const auto& [name, mom] : opt.moments()) {
    int n = static_cast<int>(mom.m.size());
    data.tensors.emplace_back("adam.m." + name, Tensor({n}, mom.m));
    data.tensors.emplace_back("adam.v." + name, Tensor({n}, mom.v));
  }
  save_checkpoint(path, data);
}

LoadedSession load_session(const std::filesystem::path& path) {
  CheckpointData data = load_checkpoint(path);

  auto take = [&](const char* key) {
    auto it = data.config.find(key);
    if (it == data.config.end()) {
      throw CheckpointError(CheckpointError::Kind::Corrupt,
                            std::string("checkpoint config missing '") + key + "'");
    }
    std::string v = it->second;
    data.config.erase(it);
    return v;
  };

  LoadedSession s;
  s.step = std::stol(take("step"));
  s.rng_state = take("rng");
  s.vocab = decode_vocab_line(take("vocab"));
  s.run = RunConfig::from_map(data.config);

  ModelConfig mc = model_config_from(s.run, s.vocab.size());
  s.model = std::make_unique<Model>(mc, static_cast<std::uint32_t>(s.run.seed));

  size_t param_count = 0;
  for (auto& [name, tensor] : data.tensors) {
    if (name.rfind("adam.m.", 0) == 0 || name.rfind("adam.v.", 0) == 0) {
      bool is_m = name[5] == 'm';
      std::string pname = name.substr(7);
      auto& mom = s.moments[pname];
      auto& slot = is_m ? mom.m : mom.v;
      slot.assign(tensor.data().begin(), tensor.data().end());
      continue;
    }
    if (!s.model->params().has(name)) {
      throw CheckpointError(CheckpointError::Kind::Corrupt,
                            "checkpoint tensor '" + name + "' unknown to this model config");
    }
    Tensor& dst = s.model->params().get(name);
    if (dst.shape() != tensor.shape()) {
      throw CheckpointError(CheckpointError::Kind::Corrupt,
                            "checkpoint tensor '" + name + "' has shape " + tensor.shape_str() +
                                ", model expects " + dst.shape_str());
    }
    std::copy(tensor.data().begin(), tensor.data().end(), dst.data().begin());
    ++param_count;
  }
  if (param_count != s.model->params().count()) {
    throw CheckpointError(CheckpointError::Kind::Corrupt,
                          "checkpoint holds " + std::to_string(param_count) + " of " +
                              std::to_string(s.model->params().count()) + " model tensors");
  }
  for (const auto& [pname, mom] : s.moments) {
    if (!s.model->params().has(pname) ||
        mom.m.size() != s.model->params().get(pname).size() || mom.m.size() != mom.v.size()) {
      throw CheckpointError(CheckpointError::Kind::Corrupt,
                            "checkpoint Adam moments for '" + pname + "' are inconsistent");
    }
  }
  return s;
}

AdamOptimizer LoadedSession::make_optimizer() const {
  AdamConfig ac;
  ac.base_lr = run.lr;
  ac.warmup_steps = run.warmup_steps;
  AdamOptimizer opt(ac);
  opt.restore(step, moments);
  return opt;
}

}  // namespace vilsum
