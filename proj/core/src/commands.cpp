#include "vilsum/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "vilsum/beam.hpp"
#include "vilsum/errors.hpp"
#include "vilsum/retrieval.hpp"
#include "vilsum/synth.hpp"
#include "vilsum/training.hpp"

namespace vilsum {

namespace {

// Per-example work with deterministic, index-addressed outputs; exceptions
// from workers are rethrown on the calling thread.
template <typename Fn>
void parallel_for(int n, const Fn& fn) {
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min({workers, n, 8});
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string join_csv(const std::vector<std::string>& parts) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ',';
    out += parts[i];
  }
  return out;
}

std::string f4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::vector<MultiModalExample> load_split(const std::filesystem::path& data_dir,
                                          const char* split) {
  std::vector<MultiModalExample> exs = load_examples(data_dir / (std::string(split) + ".jsonl"));
  if (exs.empty()) {
    throw IoError((data_dir / (std::string(split) + ".jsonl")).string() + " holds no records");
  }
  return exs;
}

MultiModalExample load_single_record(const std::filesystem::path& input) {
  std::vector<MultiModalExample> exs = load_examples(input);
  if (exs.size() != 1) {
    throw ContractError(input.string() + " must hold exactly one record, found " +
                        std::to_string(exs.size()));
  }
  return std::move(exs[0]);
}

BeamParams beam_params_of(const RunConfig& run) {
  BeamParams bp;
  bp.beam_size = run.beam_size;
  bp.min_len = run.min_len;
  bp.max_len = run.max_len;
  bp.validate();
  return bp;
}

// Mean of rows [begin, end) of a rank-2 tensor.
std::vector<float> mean_rows(const Tensor& t, int begin, int end) {
  int d = t.dim(1);
  std::vector<double> acc(static_cast<size_t>(d), 0.0);
  for (int r = begin; r < end; ++r) {
    for (int c = 0; c < d; ++c) acc[static_cast<size_t>(c)] += t.at(r, c);
  }
  std::vector<float> out(static_cast<size_t>(d));
  int n = std::max(1, end - begin);
  for (int c = 0; c < d; ++c) out[static_cast<size_t>(c)] = static_cast<float>(acc[static_cast<size_t>(c)] / n);
  return out;
}

std::vector<float> row_of(const Tensor& t, int r) {
  int d = t.dim(1);
  const float* p = t.data().data() + static_cast<size_t>(r) * d;
  return std::vector<float>(p, p + d);
}

}  // namespace

void cmd_gendata(const GendataOptions& opt) {
  SynthConfig cfg;
  cfg.n_docs = opt.docs;
  cfg.seed = opt.seed;
  std::vector<SplitStats> stats = write_corpus(opt.out_dir, cfg);
  std::cout << "split,docs,avg_tokens,avg_images\n";
  for (const auto& st : stats) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s,%d,%.2f,%.2f\n", st.name.c_str(), st.docs,
                  st.avg_tokens, st.avg_images);
    std::cout << buf;
  }
  std::cerr << "corpus written to " << opt.out_dir.string() << "\n";
}

void cmd_train(const TrainOptions& opt) {
  RunConfig run = opt.config_path.empty() ? RunConfig{} : RunConfig::from_file(opt.config_path);
  if (!opt.mode_override.empty()) run.mode = opt.mode_override;
  if (!opt.tasks_override.empty()) run.tasks = opt.tasks_override;
  run.validate();
  TaskFlags tasks = TaskFlags::parse(run.tasks);

  std::vector<MultiModalExample> train_set = load_split(opt.data_dir, "train");

  Vocab vocab;
  std::unique_ptr<Model> model;
  AdamOptimizer optimizer{AdamConfig{}};

  if (!opt.resume_ckpt.empty()) {
    LoadedSession session = load_session(opt.resume_ckpt);
    std::vector<std::string> diff = RunConfig::diff_keys(session.run, run);
    std::erase(diff, "epochs");  // training may be extended
    if (!diff.empty()) {
      std::string keys;
      for (size_t i = 0; i < diff.size(); ++i) keys += (i ? ", " : "") + diff[i];
      throw ConfigError("resume checkpoint disagrees with the requested config on: " + keys);
    }
    int target_epochs = run.epochs;
    run = session.run;
    run.epochs = target_epochs;
    vocab = std::move(session.vocab);
    model = std::move(session.model);
    optimizer = session.make_optimizer();
    std::cerr << "resuming from " << opt.resume_ckpt.string() << " at step " << session.step
              << "\n";
  } else {
    std::vector<std::string> corpus;
    for (const auto& ex : train_set) {
      for (const auto& p : ex.paragraphs) corpus.push_back(p);
      for (const auto& c : ex.captions) corpus.push_back(c);
      corpus.push_back(ex.summary);
    }
    vocab = Vocab::build(corpus, 512);
    model = std::make_unique<Model>(model_config_from(run, vocab.size()),
                                    static_cast<std::uint32_t>(run.seed));
    AdamConfig ac;
    ac.base_lr = run.lr;
    ac.warmup_steps = run.warmup_steps;
    optimizer = AdamOptimizer(ac);
  }

  Trainer trainer(*model, optimizer, vocab, std::move(train_set), run.batch_size, run.seed,
                  tasks);
  const long spe = trainer.steps_per_epoch();
  const long total_steps = static_cast<long>(run.epochs) * spe;

  std::cout << "epoch,loss_gen,loss_sel,loss_reo,loss_total\n";
  double acc_gen = 0, acc_sel = 0, acc_reo = 0, acc_total = 0;
  long acc_n = 0;
  while (optimizer.step_count() < total_steps) {
    StepResult r = trainer.step_once();
    if (r.gen) acc_gen += *r.gen;
    if (r.sel) acc_sel += *r.sel;
    if (r.reo) acc_reo += *r.reo;
    acc_total += r.total;
    ++acc_n;
    if (optimizer.step_count() % spe == 0) {
      long epoch = optimizer.step_count() / spe;
      std::vector<std::string> cells{std::to_string(epoch)};
      char buf[32];
      auto cell = [&](bool present, double sum) {
        if (!present) return std::string();
        std::snprintf(buf, sizeof buf, "%.6f", sum / static_cast<double>(acc_n));
        return std::string(buf);
      };
      cells.push_back(cell(tasks.gen, acc_gen));
      cells.push_back(cell(tasks.sel, acc_sel));
      cells.push_back(cell(tasks.reo, acc_reo));
      cells.push_back(cell(true, acc_total));
      std::cout << join_csv(cells) << "\n" << std::flush;
      acc_gen = acc_sel = acc_reo = acc_total = 0;
      acc_n = 0;
    }
  }
  save_session(opt.out_ckpt, *model, optimizer, run, vocab, "none");
  std::cerr << "checkpoint written to " << opt.out_ckpt.string() << " (step "
            << optimizer.step_count() << ")\n";
}

std::string format_report(const EvaluateResult& res) {
  std::string out = res.report.serialize();
  out += "n_examples=" + std::to_string(res.n_examples) + "\n";
  out += "reorder_accuracy=" + f4(res.reorder_accuracy) + "\n";
  out += "selection_f1=" + f4(res.selection_f1) + "\n";
  return out;
}

EvaluateResult run_evaluate(const EvaluateOptions& opt) {
  LoadedSession session = load_session(opt.ckpt);
  if (!opt.config_path.empty()) {
    RunConfig file_cfg = RunConfig::from_file(opt.config_path);
    std::vector<std::string> diff = RunConfig::diff_keys(session.run, file_cfg);
    if (!diff.empty()) {
      std::string keys;
      for (size_t i = 0; i < diff.size(); ++i) keys += (i ? ", " : "") + diff[i];
      throw ConfigError("checkpoint and config disagree on: " + keys);
    }
  }
  const RunConfig& run = session.run;
  const Model& model = *session.model;
  const TaskFlags tasks = session.tasks();
  const BeamParams bp = beam_params_of(run);

  std::vector<MultiModalExample> test_set = load_split(opt.data_dir, "test");
  std::vector<MultiModalExample> train_set = load_split(opt.data_dir, "train");

  // The retrieval scorer behind MAX_sim learns from the frozen training
  // split — one (first important image, reference summary) pair per
  // document — independent of the model under evaluation.
  std::vector<std::pair<ImageGrid, std::string>> pairs;
  for (const auto& ex : train_set) {
    if (ex.images.empty()) continue;
    int idx = 0;
    if (!ex.important.empty() && ex.important[0] < static_cast<int>(ex.images.size())) {
      idx = std::max(0, ex.important[0]);
    } else {
      std::vector<float> bits = build_selection_labels(ex.captions, ex.summary, 1);
      for (size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] > 0.5f) {
          idx = static_cast<int>(i);
          break;
        }
      }
    }
    pairs.emplace_back(ex.images[static_cast<size_t>(idx)], ex.summary);
  }
  RetrievalScorer scorer;
  float gap = scorer.train(pairs);
  std::cerr << "retrieval scorer held-out gap: " << gap << "\n";

  struct Row {
    RougeScore r1, r2, rl;
    float ip = 0, ms = 0, sel_f1 = 0;
    int reo_ok = 0, reo_n = 0;
    std::string generated;
    std::vector<int> ref, rec;
  };
  const int n = static_cast<int>(test_set.size());
  std::vector<Row> rows(static_cast<size_t>(n));

  parallel_for(n, [&](int i) {
    const MultiModalExample& ex = test_set[static_cast<size_t>(i)];
    Row& row = rows[static_cast<size_t>(i)];

    // Generation, selection, and IP use the images in document order, so
    // selection indices line up with the reference labels directly.
    PreparedExample prep =
        prepare_example(ex, session.vocab, model.config(), nullptr, run.k_select);
    Tape tape;
    EncoderOutput enc = model.encode(tape, prep.images, prep.text_ids);
    std::vector<int> gen_ids = beam_search(model, tape, enc, bp);
    row.generated = opt.gold_summaries ? ex.summary : session.vocab.decode(gen_ids);

    Selection sel = select_images(model, tape, enc, run.k_select, tasks.sel, gen_ids);
    row.rec = sel.ranked;
    row.ref = prep.gold_selected;

    row.r1 = rouge_n(row.generated, ex.summary, 1);
    row.r2 = rouge_n(row.generated, ex.summary, 2);
    row.rl = rouge_l(row.generated, ex.summary);
    row.ip = image_precision(row.ref, row.rec);

    std::vector<ImageGrid> rec_imgs;
    for (int r : row.rec) rec_imgs.push_back(prep.images[static_cast<size_t>(r)]);
    row.ms = max_sim(scorer, rec_imgs, row.generated);

    std::vector<int> inter;
    std::vector<int> ref_sorted = row.ref, rec_sorted = row.rec;
    std::sort(ref_sorted.begin(), ref_sorted.end());
    std::sort(rec_sorted.begin(), rec_sorted.end());
    std::set_intersection(ref_sorted.begin(), ref_sorted.end(), rec_sorted.begin(),
                          rec_sorted.end(), std::back_inserter(inter));
    size_t denom = row.ref.size() + row.rec.size();
    row.sel_f1 = denom == 0 ? 0.0f
                            : 2.0f * static_cast<float>(inter.size()) /
                                  static_cast<float>(denom);

    // Reordering is scored on a second pass whose shuffle depends only on
    // the document id, so every evaluated checkpoint sees the same views.
    std::seed_seq seq{0x0EA1u, fnv1a(ex.doc_id)};
    std::mt19937 rng(seq);
    PreparedExample shuffled =
        prepare_example(ex, session.vocab, model.config(), &rng, run.k_select);
    Tape tape2;
    EncoderOutput enc2 = model.encode(tape2, shuffled.images, shuffled.text_ids);
    const Tensor& logits = tape2.val(model.reorder_logits(tape2, enc2));
    for (int m = 0; m < logits.dim(0); ++m) {
      int best = 0;
      for (int c = 1; c < logits.dim(1); ++c) {
        if (logits.at(m, c) > logits.at(m, best)) best = c;
      }
      row.reo_ok += best == shuffled.labels.reorder_target[static_cast<size_t>(m)] ? 1 : 0;
      ++row.reo_n;
    }
  });

  EvaluateResult res;
  res.n_examples = n;
  double r1p = 0, r1r = 0, r1f = 0, r2p = 0, r2r = 0, r2f = 0, rlp = 0, rlr = 0, rlf = 0;
  double ip = 0, ms = 0, self1 = 0;
  long reo_ok = 0, reo_n = 0;
  for (const Row& row : rows) {
    r1p += row.r1.precision; r1r += row.r1.recall; r1f += row.r1.f1;
    r2p += row.r2.precision; r2r += row.r2.recall; r2f += row.r2.f1;
    rlp += row.rl.precision; rlr += row.rl.recall; rlf += row.rl.f1;
    ip += row.ip;
    ms += row.ms;
    self1 += row.sel_f1;
    reo_ok += row.reo_ok;
    reo_n += row.reo_n;
  }
  auto avg = [n](double s) { return static_cast<float>(s / n); };
  res.report.rouge1 = {avg(r1p), avg(r1r), avg(r1f)};
  res.report.rouge2 = {avg(r2p), avg(r2r), avg(r2f)};
  res.report.rougeL = {avg(rlp), avg(rlr), avg(rlf)};
  res.report.ip = avg(ip);
  res.report.max_sim = avg(ms);
  res.report.mmae = mmae(res.report.rougeL.f1, res.report.max_sim, res.report.ip);
  res.selection_f1 = avg(self1);
  res.reorder_accuracy = reo_n == 0 ? 0.0f
                                    : static_cast<float>(static_cast<double>(reo_ok) / reo_n);

  if (!opt.report_path.empty()) write_text_file(opt.report_path, format_report(res));
  if (!opt.details_path.empty()) {
    std::ofstream out(opt.details_path, std::ios::binary);
    if (!out) throw IoError("cannot open " + opt.details_path.string() + " for writing");
    for (int i = 0; i < n; ++i) {
      const Row& row = rows[static_cast<size_t>(i)];
      nlohmann::json j;
      j["doc_id"] = test_set[static_cast<size_t>(i)].doc_id;
      j["generated"] = row.generated;
      j["ref_images"] = row.ref;
      j["rec_images"] = row.rec;
      j["ip"] = row.ip;
      j["max_sim"] = row.ms;
      j["rouge1_f1"] = row.r1.f1;
      j["rouge2_f1"] = row.r2.f1;
      j["rougeL_f1"] = row.rl.f1;
      out << j.dump() << '\n';
    }
    if (!out) throw IoError("failed writing " + opt.details_path.string());
  }
  return res;
}

void cmd_evaluate(const EvaluateOptions& opt) {
  EvaluateResult res = run_evaluate(opt);
  std::cout << format_report(res);
}

SummarizeResult run_summarize(const SummarizeOptions& opt) {
  if (opt.k < 1) throw ConfigError("k must be >= 1");
  LoadedSession session = load_session(opt.ckpt);
  std::vector<CorpusRecord> records = read_jsonl(opt.input);
  if (records.size() != 1) {
    throw ContractError(opt.input.string() + " must hold exactly one record, found " +
                        std::to_string(records.size()));
  }
  MultiModalExample ex = load_single_record(opt.input);

  const Model& model = *session.model;
  PreparedExample prep =
      prepare_example(ex, session.vocab, model.config(), nullptr, session.run.k_select);
  int m = static_cast<int>(prep.images.size());
  if (opt.k > m) {
    std::cerr << "warning: k=" << opt.k << " exceeds the " << m
              << " available images; selecting all\n";
  }

  Tape tape;
  EncoderOutput enc = model.encode(tape, prep.images, prep.text_ids);
  std::vector<int> gen_ids = beam_search(model, tape, enc, beam_params_of(session.run));
  Selection sel = select_images(model, tape, enc, opt.k, session.tasks().sel, gen_ids);

  SummarizeResult out;
  out.summary = session.vocab.decode(gen_ids);
  for (int idx : sel.ranked) {
    out.image_paths.push_back(records[0].image_paths[static_cast<size_t>(idx)]);
  }
  return out;
}

void cmd_summarize(const SummarizeOptions& opt) {
  SummarizeResult res = run_summarize(opt);
  std::cout << res.summary << "\n";
  for (const auto& p : res.image_paths) std::cout << p << "\n";
}

float AlignmentResult::diagonal_gap() const {
  double diag = 0, off = 0;
  long n_diag = 0, n_off = 0;
  int m = static_cast<int>(matrix.size());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n_paragraph_cols; ++j) {
      if (i == j) {
        diag += matrix[static_cast<size_t>(i)][static_cast<size_t>(j)];
        ++n_diag;
      } else {
        off += matrix[static_cast<size_t>(i)][static_cast<size_t>(j)];
        ++n_off;
      }
    }
  }
  if (n_diag == 0 || n_off == 0) return 0.0f;
  return static_cast<float>(diag / n_diag - off / n_off);
}

AlignmentResult run_alignment(const AlignmentOptions& opt) {
  LoadedSession session = load_session(opt.ckpt);
  MultiModalExample ex = load_single_record(opt.input);
  const Model& model = *session.model;

  PreparedExample prep =
      prepare_example(ex, session.vocab, model.config(), nullptr, session.run.k_select);
  Tape tape;
  EncoderOutput enc = model.encode(tape, prep.images, prep.text_ids);
  std::vector<int> gen_ids = beam_search(model, tape, enc, beam_params_of(session.run));

  const Tensor& visual = tape.val(enc.visual);
  const Tensor& text = tape.val(enc.text);

  std::vector<std::vector<float>> para_vecs;
  for (const auto& [begin, end] : prep.paragraph_spans) {
    para_vecs.push_back(mean_rows(text, begin, end));
  }

  // Decoder states for the generated summary; row t is the state that
  // produced token t, so content tokens live at rows 1..len.
  std::vector<int> dec_in{Vocab::kStart};
  dec_in.insert(dec_in.end(), gen_ids.begin(), gen_ids.end());
  const Tensor& dec = tape.val(model.decoder_states(tape, enc, dec_in));

  // Sentence boundaries after any token ending in . ! ? — one sentence
  // when the vocabulary carries no punctuation.
  std::vector<std::pair<int, int>> sent_spans;
  int start = 0;
  for (int t = 0; t < static_cast<int>(gen_ids.size()); ++t) {
    std::string w = session.vocab.decode(std::vector<int>{gen_ids[static_cast<size_t>(t)]});
    if (!w.empty() && (w.back() == '.' || w.back() == '!' || w.back() == '?')) {
      sent_spans.emplace_back(start, t + 1);
      start = t + 1;
    }
  }
  if (start < static_cast<int>(gen_ids.size())) {
    sent_spans.emplace_back(start, static_cast<int>(gen_ids.size()));
  }
  std::vector<std::vector<float>> sent_vecs;
  for (const auto& [b, e] : sent_spans) sent_vecs.push_back(mean_rows(dec, b + 1, e + 1));

  AlignmentResult res;
  res.n_paragraph_cols = static_cast<int>(para_vecs.size());
  for (size_t p = 0; p < para_vecs.size(); ++p) res.col_labels.push_back("para_" + std::to_string(p));
  for (size_t s = 0; s < sent_vecs.size(); ++s) res.col_labels.push_back("sent_" + std::to_string(s));

  int m = visual.dim(0);
  for (int i = 0; i < m; ++i) {
    res.row_ids.push_back("img_" + std::to_string(i));
    std::vector<float> vi = row_of(visual, i);
    std::vector<float> row;
    for (const auto& pv : para_vecs) row.push_back(std::clamp(cosine(vi, pv), -1.0f, 1.0f));
    for (const auto& sv : sent_vecs) row.push_back(std::clamp(cosine(vi, sv), -1.0f, 1.0f));
    res.matrix.push_back(std::move(row));
  }

  if (!opt.out_csv.empty()) {
    std::string csv = "image_id," + join_csv(res.col_labels) + "\n";
    for (int i = 0; i < m; ++i) {
      std::vector<std::string> cells{res.row_ids[static_cast<size_t>(i)]};
      for (float v : res.matrix[static_cast<size_t>(i)]) cells.push_back(f4(v));
      csv += join_csv(cells) + "\n";
    }
    write_text_file(opt.out_csv, csv);
  }
  return res;
}

void cmd_alignment(const AlignmentOptions& opt) {
  run_alignment(opt);
  std::cerr << "heatmap written to " << opt.out_csv.string() << "\n";
}

}  // namespace vilsum
