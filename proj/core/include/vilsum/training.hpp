#pragma once

#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vilsum/adam.hpp"
#include "vilsum/image.hpp"
#include "vilsum/model.hpp"
#include "vilsum/run_config.hpp"
#include "vilsum/text.hpp"

namespace vilsum {

/// One (document, images, captions, summary) unit. `important` carries the
/// construction-time important paragraph indices when the corpus provides
/// them (synthetic data does); empty otherwise.
struct MultiModalExample {
  std::string doc_id;
  std::vector<std::string> paragraphs;
  std::vector<ImageGrid> images;
  std::vector<std::string> captions;
  std::string summary;
  std::vector<int> important;
};

struct PseudoLabels {
  std::vector<float> selection;      // one bit per image slot, min(K,M) ones
  std::vector<int> reorder_target;   // slot j -> original image index
  std::vector<int> shuffle_applied;  // original index -> slot
};

/// Draws uniformly from [0, n) by rejection sampling (exact, reproducible).
int uniform_index(std::mt19937& rng, int n);
/// Uniform permutation of 0..m-1 (Fisher-Yates with uniform_index).
std::vector<int> uniform_permutation(int m, std::mt19937& rng);

/// Scores each caption against the summary by mean ROUGE-1/2/L F1 and
/// marks the top-k (ties by lower index). Empty summary: warns on stderr
/// and marks the first min(k, M).
std::vector<float> build_selection_labels(const std::vector<std::string>& captions,
                                          const std::string& summary, int k = 3);

struct ShuffleResult {
  std::vector<ImageGrid> images;
  std::vector<int> reorder_target;   // slot j -> original index
  std::vector<int> shuffle_applied;  // original index -> slot
};
ShuffleResult shuffle_for_reorder(const std::vector<ImageGrid>& images, std::mt19937& rng);

/// Model-ready inputs for one example.
struct PreparedExample {
  std::vector<int> text_ids;
  std::vector<std::pair<int, int>> paragraph_spans;
  std::vector<ImageGrid> images;    // at most 10, in (possibly shuffled) slot order
  std::vector<int> summary_ids;     // START ... END
  PseudoLabels labels;
  std::vector<int> gold_selected;   // original indices: importance labels, else pseudo top-k
};

/// Truncates to the first 10 images, joins paragraphs with the separator
/// token, computes selection labels before shuffling, then applies a fresh
/// uniform shuffle (when shuffle_rng is non-null) to images and labels.
PreparedExample prepare_example(const MultiModalExample& ex, const Vocab& vocab,
                                const ModelConfig& cfg, std::mt19937* shuffle_rng,
                                int k_select = 3);

struct StepResult {
  long step = 0;  // optimizer step count after the update
  std::optional<float> gen, sel, reo;
  float total = 0.0f;
};

/// Forward + backward over the batch (mean gradients), then one Adam
/// update. Throws TrainingError with diagnostics on non-finite losses.
StepResult train_step(Model& model, AdamOptimizer& opt,
                      std::span<const PreparedExample> batch, TaskFlags tasks);

/// Deterministic multi-task training driver. The batch schedule is a pure
/// function of (seed, step): epoch order comes from a per-epoch derived
/// rng, per-example image shuffles from per-(epoch, example) derived rngs,
/// so a resumed run replays exactly the remaining steps.
class Trainer {
 public:
  Trainer(Model& model, AdamOptimizer& opt, const Vocab& vocab,
          std::vector<MultiModalExample> train_set, int batch_size, long seed, TaskFlags tasks);

  long steps_per_epoch() const { return steps_per_epoch_; }
  long step() const;
  StepResult step_once();
  std::vector<StepResult> run_steps(long n);

 private:
  std::vector<size_t> epoch_order(long epoch) const;

  Model& model_;
  AdamOptimizer& opt_;
  const Vocab& vocab_;
  std::vector<MultiModalExample> train_;
  int batch_size_;
  long seed_;
  TaskFlags tasks_;
  long steps_per_epoch_;
};

/// Everything needed to restart or evaluate a run, stored in one file:
/// run config, vocabulary, step counter, master rng state, model
/// parameters, and Adam moments.
void save_session(const std::filesystem::path& path, const Model& model,
                  const AdamOptimizer& opt, const RunConfig& run, const Vocab& vocab,
                  const std::string& rng_state);

struct LoadedSession {
  RunConfig run;
  Vocab vocab;
  long step = 0;
  std::string rng_state;
  std::unique_ptr<Model> model;
  std::map<std::string, AdamOptimizer::Moments> moments;

  TaskFlags tasks() const { return TaskFlags::parse(run.tasks); }
  AdamOptimizer make_optimizer() const;
};
LoadedSession load_session(const std::filesystem::path& path);

/// ModelConfig implied by a run config and vocabulary size.
ModelConfig model_config_from(const RunConfig& run, int vocab_size);

}  // namespace vilsum
