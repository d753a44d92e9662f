#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "vilsum/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"vilsum — multimodal summarization: generate, train, evaluate, summarize"};
  app.require_subcommand(1);

  vilsum::GendataOptions gd;
  std::string gd_out;
  CLI::App* gendata = app.add_subcommand("gendata", "generate a synthetic multimodal corpus");
  gendata->add_option("--out", gd_out, "output directory")->required();
  gendata->add_option("--docs", gd.docs, "number of documents (>= 10)")->required();
  gendata->add_option("--seed", gd.seed, "rng seed")->capture_default_str();
  gendata->callback([&] {
    gd.out_dir = gd_out;
    vilsum::cmd_gendata(gd);
  });

  vilsum::TrainOptions tr;
  std::string tr_data, tr_config, tr_out, tr_resume;
  CLI::App* train = app.add_subcommand("train", "train a model on a corpus directory");
  train->add_option("--data", tr_data, "corpus directory (train.jsonl inside)")->required();
  train->add_option("--config", tr_config, "key=value run config file")->required();
  train->add_option("--out", tr_out, "checkpoint output path")->required();
  train->add_option("--mode", tr.mode_override, "encoder mode: joint or cross");
  train->add_option("--tasks", tr.tasks_override, "comma list from gen, sel, reo");
  train->add_option("--resume", tr_resume, "checkpoint to continue from");
  train->callback([&] {
    tr.data_dir = tr_data;
    tr.config_path = tr_config;
    tr.out_ckpt = tr_out;
    tr.resume_ckpt = tr_resume;
    vilsum::cmd_train(tr);
  });

  vilsum::EvaluateOptions ev;
  std::string ev_data, ev_ckpt, ev_report, ev_config, ev_details;
  CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint on the test split");
  evaluate->add_option("--data", ev_data, "corpus directory (test.jsonl inside)")->required();
  evaluate->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  evaluate->add_option("--report", ev_report, "metric report output file")->required();
  evaluate->add_option("--config", ev_config, "config file that must match the checkpoint");
  evaluate->add_option("--details", ev_details, "per-example JSONL output file");
  evaluate->add_flag("--gold-summaries", ev.gold_summaries,
                     "score reference summaries against themselves (calibration)");
  evaluate->callback([&] {
    ev.data_dir = ev_data;
    ev.ckpt = ev_ckpt;
    ev.report_path = ev_report;
    ev.config_path = ev_config;
    ev.details_path = ev_details;
    vilsum::cmd_evaluate(ev);
  });

  vilsum::SummarizeOptions su;
  std::string su_ckpt, su_input;
  CLI::App* summarize = app.add_subcommand("summarize", "summarize one JSONL record");
  summarize->add_option("--ckpt", su_ckpt, "checkpoint path")->required();
  summarize->add_option("--input", su_input, "single-record JSONL file")->required();
  summarize->add_option("--k", su.k, "images to select")->capture_default_str();
  summarize->callback([&] {
    su.ckpt = su_ckpt;
    su.input = su_input;
    vilsum::cmd_summarize(su);
  });

  vilsum::AlignmentOptions al;
  std::string al_ckpt, al_input, al_out;
  CLI::App* alignment = app.add_subcommand("alignment", "export an image/text relevance heatmap");
  alignment->add_option("--ckpt", al_ckpt, "checkpoint path")->required();
  alignment->add_option("--input", al_input, "single-record JSONL file")->required();
  alignment->add_option("--out", al_out, "CSV output path")->required();
  alignment->callback([&] {
    al.ckpt = al_ckpt;
    al.input = al_input;
    al.out_csv = al_out;
    vilsum::cmd_alignment(al);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
