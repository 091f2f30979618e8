// Command line front end: synthetic data generation, the three training
// stages, sample mining, online inference, and evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "logo/metrics.hpp"
#include "logo/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace logo;

namespace {

pipe::PipelineConfig resolve_config(const std::string& config_path,
                                    const std::vector<std::string>& sets) {
  return pipe::load_config(config_path, sets);
}

void write_resolved(const pipe::PipelineConfig& cfg, const std::string& beside) {
  std::ofstream os(beside);
  os << pipe::config_to_json_text(cfg) << "\n";
}

json report_to_json(const metrics::MetricsReport& r) {
  json j;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f_measure"] = r.f_measure;
  j["mota"] = r.mota;
  if (r.motp) j["motp"] = *r.motp;
  j["idf1"] = r.idf1;
  j["m_tracked"] = r.m_tracked;
  j["m_lost"] = r.m_lost;
  j["tp"] = r.tp;
  j["fp"] = r.fp;
  j["fn"] = r.fn;
  j["id_switches"] = r.id_switches;
  j["gt_boxes"] = r.gt_boxes;
  j["gt_trajectories"] = r.gt_trajectories;
  return j;
}

void print_report(const metrics::MetricsReport& r) {
  std::printf("%-12s %10s\n", "metric", "value");
  std::printf("%-12s %9.4f%%\n", "MOTA", 100.0 * r.mota);
  if (r.motp)
    std::printf("%-12s %9.4f%%\n", "MOTP", 100.0 * *r.motp);
  else
    std::printf("%-12s %10s\n", "MOTP", "n/a");
  std::printf("%-12s %9.4f%%\n", "IDF1", 100.0 * r.idf1);
  std::printf("%-12s %9.4f%%\n", "M-Tracked", r.m_tracked);
  std::printf("%-12s %9.4f%%\n", "M-Lost", r.m_lost);
  std::printf("%-12s %10ld\n", "TP", r.tp);
  std::printf("%-12s %10ld\n", "FP", r.fp);
  std::printf("%-12s %10ld\n", "FN", r.fn);
  std::printf("%-12s %10ld\n", "ID-switches", r.id_switches);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"logo: desk-scale video text spotting pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;

  // ---- synth-gen ----
  auto* synth_cmd = app.add_subcommand("synth-gen", "generate a synthetic video-text dataset");
  std::string script_path, preset, out_dir;
  uint64_t synth_seed = 1;
  synth_cmd->add_option("--script", script_path, "scene script JSON file");
  synth_cmd->add_option("--preset", preset,
                        "built-in scene family: train-det|mine|eval-clean|bench-distractor|"
                        "bench-crossing|occlusion-gap");
  synth_cmd->add_option("--out", out_dir, "output dataset directory")->required();
  synth_cmd->add_option("--seed", synth_seed, "generation seed");

  // ---- train-detector ----
  auto* tdet = app.add_subcommand("train-detector", "train the rotated text detector");
  std::string data_dir, out_ckpt;
  tdet->add_option("--config", config_path, "pipeline config JSON");
  tdet->add_option("--set", sets, "config overrides key=value");
  tdet->add_option("--data", data_dir, "training dataset directory")->required();
  tdet->add_option("--out", out_ckpt, "output checkpoint path")->required();

  // ---- mine-samples ----
  auto* mine_cmd = app.add_subcommand("mine-samples", "build the classifier sample archive");
  std::string det_ckpt, archive_out;
  int neg_cap = -1;
  mine_cmd->add_option("--config", config_path, "pipeline config JSON");
  mine_cmd->add_option("--set", sets, "config overrides key=value");
  mine_cmd->add_option("--data", data_dir, "dataset directory to mine")->required();
  mine_cmd->add_option("--detector", det_ckpt, "trained detector checkpoint")->required();
  mine_cmd->add_option("--out", archive_out, "output archive directory")->required();
  mine_cmd->add_option("--neg-cap-per-frame", neg_cap, "cap negatives per frame (default: uncapped)");

  // ---- train-lsc ----
  auto* tlsc = app.add_subcommand("train-lsc", "train the language synergy classifier");
  std::string samples_dir, seg_loss = "mse", lsc_out;
  std::string lsc_det_ckpt;
  tlsc->add_option("--config", config_path, "pipeline config JSON");
  tlsc->add_option("--set", sets, "config overrides key=value");
  tlsc->add_option("--samples", samples_dir, "mined sample archive")->required();
  tlsc->add_option("--detector", lsc_det_ckpt, "prerequisite detector checkpoint")->required();
  tlsc->add_option("--out", lsc_out, "output checkpoint path")->required();
  tlsc->add_option("--seg-loss", seg_loss, "glyph branch loss: mse|bce");

  // ---- train-tracker ----
  auto* ttrk = app.add_subcommand("train-tracker", "train the short/long-term matcher");
  std::string trk_det, trk_lsc, trk_out;
  bool no_vpmm_train = false;
  ttrk->add_option("--config", config_path, "pipeline config JSON");
  ttrk->add_option("--set", sets, "config overrides key=value");
  ttrk->add_option("--data", data_dir, "training dataset directory")->required();
  ttrk->add_option("--detector", trk_det, "prerequisite detector checkpoint")->required();
  ttrk->add_option("--lsc", trk_lsc, "prerequisite classifier checkpoint")->required();
  ttrk->add_option("--out", trk_out, "output checkpoint path")->required();
  ttrk->add_flag("--no-vpmm", no_vpmm_train, "fuse visual features only (ablation)");

  // ---- infer ----
  auto* infer_cmd = app.add_subcommand("infer", "run the online pipeline over a sequence");
  std::string inf_data, inf_det, inf_lsc, inf_trk, tracks_out, profile = "default";
  std::string inf_tracker_kind = "lst";
  bool no_lsc = false, no_vpmm = false;
  infer_cmd->add_option("--config", config_path, "pipeline config JSON");
  infer_cmd->add_option("--set", sets, "config overrides key=value");
  infer_cmd->add_option("--data", inf_data, "sequence directory")->required();
  infer_cmd->add_option("--detector", inf_det, "detector checkpoint")->required();
  infer_cmd->add_option("--lsc", inf_lsc, "classifier checkpoint")->required();
  infer_cmd->add_option("--tracker", inf_trk, "tracker checkpoint")->required();
  infer_cmd->add_option("--out", tracks_out, "output tracks.jsonl")->required();
  infer_cmd->add_option("--profile", profile, "default|dense")
      ->check(CLI::IsMember({"default", "dense"}));
  infer_cmd->add_flag("--no-lsc", no_lsc, "skip fusion re-scoring (ablation)");
  infer_cmd->add_flag("--no-vpmm", no_vpmm, "visual-features-only embeddings (ablation)");
  infer_cmd->add_option("--tracker-kind", inf_tracker_kind, "lst|bytetrack-style");

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "evaluate tracks against a dataset");
  std::string ev_tracks, ev_data, task = "track", report_out;
  double ev_iou = 0.5;
  eval_cmd->add_option("--tracks", ev_tracks, "tracks.jsonl")->required();
  eval_cmd->add_option("--data", ev_data, "dataset directory with ground truth")->required();
  eval_cmd->add_option("--task", task, "det|track|spot")->check(CLI::IsMember({"det", "track", "spot"}));
  eval_cmd->add_option("--iou", ev_iou, "IoU match threshold");
  eval_cmd->add_option("--report", report_out, "write the JSON report here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) {
      std::vector<synth::SceneScript> scripts;
      if (!script_path.empty()) {
        std::ifstream is(script_path);
        require(static_cast<bool>(is), "cannot open script: " + script_path);
        std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        scripts.push_back(synth::script_from_json_text(text));
      } else {
        require(!preset.empty(), "synth-gen: need --script or --preset");
        scripts = synth::preset_scripts(preset, synth_seed);
      }
      if (scripts.size() == 1) {
        synth::write_dataset(synth::generate_sequence(scripts[0]), scripts[0], out_dir);
      } else {
        for (size_t i = 0; i < scripts.size(); ++i) {
          char sub[32];
          std::snprintf(sub, sizeof(sub), "seq_%03zu", i);
          synth::write_dataset(synth::generate_sequence(scripts[i]), scripts[i],
                               (fs::path(out_dir) / sub).string());
        }
      }
      std::cout << "wrote " << scripts.size() << " sequence(s) to " << out_dir << "\n";
    } else if (*tdet) {
      pipe::PipelineConfig cfg = resolve_config(config_path, sets);
      pipe::run_training("detector", cfg, data_dir, {}, out_ckpt);
      write_resolved(cfg, out_ckpt + ".config.json");
      std::cout << "detector checkpoint: " << out_ckpt << "\n";
    } else if (*mine_cmd) {
      pipe::PipelineConfig cfg = resolve_config(config_path, sets);
      if (neg_cap >= 0) cfg.mining.neg_cap_per_frame = neg_cap;
      const det::DetectorNet detector = det::DetectorNet::load(det_ckpt);
      mine::CodeDictionary dict;
      dict.len_max = cfg.lsc.c;
      const auto stats = mine::build_lsc_dataset(
          synth::list_sequences(data_dir),
          [&](const img::Image& f) {
            return detector.detect(f, cfg.mining.h_score, cfg.detector.nms_iou);
          },
          dict, cfg.mining, archive_out);
      write_resolved(cfg, (fs::path(archive_out) / "config.json").string());
      std::cout << "archive: " << archive_out << " positives=" << stats.positives
                << " negatives=" << stats.negatives << "\n";
    } else if (*tlsc) {
      pipe::PipelineConfig cfg = resolve_config(config_path, sets);
      cfg.lsc.seg_loss = seg_loss == "bce" ? lsc::SegLossKind::kBce : lsc::SegLossKind::kMse;
      pipe::run_training("lsc", cfg, samples_dir, {lsc_det_ckpt, "", ""}, lsc_out);
      write_resolved(cfg, lsc_out + ".config.json");
      std::cout << "lsc checkpoint: " << lsc_out << "\n";
    } else if (*ttrk) {
      pipe::PipelineConfig cfg = resolve_config(config_path, sets);
      if (no_vpmm_train) {
        cfg.use_vpmm = false;
        cfg.tracker.use_position = false;
      }
      pipe::run_training("tracker", cfg, data_dir, {trk_det, trk_lsc, ""}, trk_out);
      write_resolved(cfg, trk_out + ".config.json");
      std::cout << "tracker checkpoint: " << trk_out << "\n";
    } else if (*infer_cmd) {
      pipe::PipelineConfig cfg = resolve_config(config_path, sets);
      cfg.profile = profile;
      cfg.tracker_kind = inf_tracker_kind;
      if (no_lsc) cfg.use_lsc_rescore = false;
      if (no_vpmm) cfg.use_vpmm = false;
      const auto records =
          pipe::run_inference(inf_data, {inf_det, inf_lsc, inf_trk}, cfg, tracks_out);
      std::cout << "tracks: " << tracks_out << " (" << records.size() << " trajectories)\n";
    } else if (*eval_cmd) {
      const auto tracks = track::read_tracks_jsonl(ev_tracks);
      const synth::Dataset ds = synth::read_dataset(ev_data);
      json out;
      if (task == "det") {
        std::vector<std::vector<Detection>> per_frame(static_cast<size_t>(ds.frames));
        for (const auto& t : tracks)
          for (const auto& f : t.frames)
            if (f.frame_id >= 0 && f.frame_id < ds.frames)
              per_frame[static_cast<size_t>(f.frame_id)].push_back(Detection{f.quad, f.score});
        const auto prf = metrics::eval_detection(per_frame, ds.annotations, ev_iou);
        out["precision"] = prf.precision;
        out["recall"] = prf.recall;
        out["f_measure"] = prf.f_measure;
        out["tp"] = prf.tp;
        out["fp"] = prf.fp;
        out["fn"] = prf.fn;
        std::printf("%-12s %9.4f%%\n", "Precision", 100.0 * prf.precision);
        std::printf("%-12s %9.4f%%\n", "Recall", 100.0 * prf.recall);
        std::printf("%-12s %9.4f%%\n", "F-measure", 100.0 * prf.f_measure);
      } else {
        const auto report = task == "spot" ? metrics::eval_spotting(tracks, ds.annotations, ev_iou)
                                           : metrics::eval_mot(tracks, ds.annotations, ev_iou);
        out = report_to_json(report);
        print_report(report);
      }
      if (!report_out.empty()) {
        std::ofstream os(report_out);
        os << out.dump(2) << "\n";
      }
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
