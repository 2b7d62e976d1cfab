#include "foamfed/cli.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "foamfed/acquisition.hpp"
#include "foamfed/config.hpp"
#include "foamfed/dataset.hpp"
#include "foamfed/federation.hpp"
#include "foamfed/imageio.hpp"
#include "foamfed/imaging.hpp"
#include "foamfed/inference.hpp"
#include "foamfed/log.hpp"
#include "foamfed/maskgen.hpp"
#include "foamfed/model.hpp"
#include "foamfed/rng.hpp"
#include "foamfed/simulate.hpp"
#include "foamfed/wire.hpp"

namespace fs = std::filesystem;

namespace foamfed {

namespace {

bool parse_size(const std::string& s, int& w, int& h) {
  size_t x = s.find('x');
  if (x == std::string::npos || x == 0 || x + 1 == s.size()) return false;
  try {
    size_t used = 0;
    w = std::stoi(s.substr(0, x), &used);
    if (used != x) return false;
    h = std::stoi(s.substr(x + 1), &used);
    if (used != s.size() - x - 1) return false;
  } catch (const std::exception&) {
    return false;
  }
  return w >= 16 && h >= 16;
}

void add_train_flags(CLI::App* cmd, TrainConfig& tc) {
  cmd->add_option("--epochs", tc.epochs, "Local epochs per round");
  cmd->add_option("--steps", tc.steps_per_epoch, "Optimizer steps per epoch");
  cmd->add_option("--batch", tc.batch_size, "Batch size");
  cmd->add_option("--lr", tc.lr, "AdamW learning rate");
  cmd->add_option("--weight-decay", tc.weight_decay, "Decoupled weight decay");
  cmd->add_option("--alpha", tc.loss.alpha, "Dice weight in the segmentation loss");
  cmd->add_option("--score-weight", tc.loss.score_weight, "Score-head loss weight");
}

std::vector<fs::path> list_image_files(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

int run_synth(int count, const std::string& size, uint64_t seed, const std::string& output,
              double noise, const std::string& source) {
  SynthConfig sc;
  if (!parse_size(size, sc.width, sc.height)) {
    std::fprintf(stderr, "--size expects WxH with both at least 16 (e.g. 256x256)\n");
    return 2;
  }
  sc.noise = noise;
  sc.source_id = source;

  fs::create_directories(fs::path(output) / "images");
  fs::create_directories(fs::path(output) / "masks");
  for (int i = 0; i < count; ++i) {
    SamplePair sp = synth_sample(sc, mix_seed(seed, i));
    char stem[32];
    std::snprintf(stem, sizeof(stem), "synth_%06d", i);
    save_png(sp.image, (fs::path(output) / "images" / (std::string(stem) + ".png")).string());
    save_mask_png(sp.mask,
                  (fs::path(output) / "masks" / (std::string(stem) + "_mask.png")).string());
  }
  spdlog::info("wrote {} sample pairs to {}", count, output);
  return 0;
}

int run_train(const std::string& images, const std::string& masks, const std::string& out,
              const std::string& init, const std::string& metrics_path, const TrainConfig& tc) {
  std::vector<SamplePair> data = load_pairs(images, masks, 0, 0);
  ModelParams params = init.empty() ? make_model_params() : load_checkpoint(init);
  if (!same_manifest(params, make_model_params()))
    throw std::runtime_error("initial checkpoint manifest does not match the model");

  RoundMetrics m = train_local(params, data, tc);
  save_checkpoint(out, params);
  spdlog::info("trained on {} samples: loss={:.6f} iou={:.4f} dice={:.4f}", data.size(), m.loss,
               m.iou, m.dice);
  if (!metrics_path.empty()) {
    std::ofstream csv(metrics_path, std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot open metrics file: " + metrics_path);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", 1, m.loss, m.iou,
                  m.pixel_accuracy, m.dice);
    csv << "round,loss,iou,pixel_accuracy,dice\n" << buf;
  }
  return 0;
}

int run_infer(const std::string& model_path, const std::string& input, const std::string& output,
              const InferenceConfig& icfg) {
  ModelParams params = load_checkpoint(model_path);
  if (!same_manifest(params, make_model_params()))
    throw std::runtime_error("checkpoint manifest does not match the model");

  std::vector<fs::path> inputs;
  bool directory = fs::is_directory(input);
  if (directory) {
    inputs = list_image_files(input);
    if (inputs.empty()) throw std::runtime_error("no images found in " + input);
  } else {
    inputs.push_back(input);
  }

  fs::create_directories(output);
  int failures = 0;
  for (const auto& path : inputs) {
    Image img;
    try {
      img = decode_image(read_file_bytes(path.string()));
    } catch (const std::exception& ex) {
      spdlog::warn("{}: {}", path.string(), ex.what());
      ++failures;
      continue;
    }
    SegmentationResult seg = segment_foam(img, params, icfg);
    Image working = resize_max_dim(img, icfg.max_dim);
    std::string stem = path.stem().string();
    save_mask_png(seg.mask, (fs::path(output) / (stem + "_mask.png")).string());
    save_png(render_overlay(working, seg.mask),
             (fs::path(output) / (stem + "_overlay.png")).string());
    std::printf("%s,%.17g\n", stem.c_str(), seg.foam_pct);
  }
  if (!directory && failures > 0) throw std::runtime_error("could not decode " + input);
  return 0;
}

int run_simulate_cmd(SimulationConfig& sim, const std::string& size,
                     const std::string& partition) {
  if (!parse_size(size, sim.width, sim.height)) {
    std::fprintf(stderr, "--size expects WxH with both at least 16 (e.g. 96x96)\n");
    return 2;
  }
  sim.partition = partition == "by-source" ? PartitionMode::kBySource : PartitionMode::kIid;

  SimulationResult res = run_simulation(sim);
  for (size_t r = 0; r < res.log.fit_rounds.size(); ++r) {
    const RoundMetrics& m = res.log.fit_rounds[r];
    spdlog::info("round {}: loss={:.6f} iou={:.4f} dice={:.4f}", r + 1, m.loss, m.iou, m.dice);
  }
  std::printf("holdout,%.17g,%.17g,%.17g,%.17g\n", res.holdout.loss, res.holdout.iou,
              res.holdout.pixel_accuracy, res.holdout.dice);
  return 0;
}

}  // namespace

int cli_run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("foamfed");
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_run(static_cast<int>(argv.size()), argv.data());
}

int cli_run(int argc, const char* const* argv) {
  CLI::App app{"Federated foam segmentation toolkit"};
  app.require_subcommand(1);

  std::string log_level = "info";
  uint64_t seed = 0;
  app.add_option("--log-level", log_level, "error|warn|info|debug")
      ->check(CLI::IsMember({"error", "warn", "info", "debug"}));
  app.add_option("--seed", seed, "Seed for every stochastic component");

  // maskgen
  auto* mg = app.add_subcommand("maskgen", "Rule-based mask generation over a directory");
  mg->fallthrough();
  std::string mg_input, mg_output, mg_config;
  double mg_night_threshold = 0.0;
  int mg_min_area = 0;
  mg->add_option("--input", mg_input, "Directory of camera images")->required();
  mg->add_option("--output", mg_output, "Directory for masks and overlays")->required();
  auto* mg_nt = mg->add_option("--night-threshold", mg_night_threshold,
                               "Mean brightness below which the night branch runs");
  auto* mg_ma = mg->add_option("--min-area", mg_min_area, "Minimum surviving component area");
  mg->add_option("--config", mg_config, "Key/value config file mirroring the defaults");

  // synth
  auto* sy = app.add_subcommand("synth", "Write a procedural image/mask corpus");
  sy->fallthrough();
  int sy_count = 0;
  std::string sy_size = "256x256", sy_output, sy_source = "synth";
  double sy_noise = 6.0;
  sy->add_option("--count", sy_count, "Number of sample pairs")->required();
  sy->add_option("--size", sy_size, "Frame size WxH");
  sy->add_option("--output", sy_output, "Corpus root (images/ and masks/)")->required();
  sy->add_option("--noise", sy_noise, "Additive Gaussian pixel noise stddev");
  sy->add_option("--source", sy_source, "Source id stored on every sample");

  // train
  auto* tr = app.add_subcommand("train", "Local training on an image/mask corpus");
  tr->fallthrough();
  std::string tr_images, tr_masks, tr_out, tr_init, tr_metrics;
  TrainConfig tr_cfg;
  tr->add_option("--images", tr_images, "Image directory")->required();
  tr->add_option("--masks", tr_masks, "Mask directory")->required();
  tr->add_option("--out", tr_out, "Checkpoint output path")->required();
  tr->add_option("--init", tr_init, "Initial checkpoint (default: zero weights)");
  tr->add_option("--metrics", tr_metrics, "Write a one-row metrics CSV here");
  add_train_flags(tr, tr_cfg);

  // server
  auto* sv = app.add_subcommand("server", "Federated aggregation server");
  sv->fallthrough();
  ServerConfig sv_cfg;
  sv->add_option("--rounds", sv_cfg.rounds, "Communication rounds");
  sv->add_option("--listen", sv_cfg.listen_address, "Bind address host:port");
  sv->add_option("--save-dir", sv_cfg.save_dir, "Checkpoint/CSV directory")->required();
  sv->add_option("--init", sv_cfg.initial_checkpoint, "Starting checkpoint");
  int sv_min_clients = 1;
  sv->add_option("--min-clients", sv_min_clients, "Clients required before starting");
  sv->add_option("--fraction-fit", sv_cfg.fraction_fit, "Fraction of clients trained per round");
  sv->add_option("--eval-samples", sv_cfg.eval_samples, "Samples per client evaluate round");
  sv->add_option("--timeout", sv_cfg.round_timeout_s, "Straggler timeout in seconds");
  bool sv_no_eval = false;
  sv->add_flag("--no-eval", sv_no_eval, "Skip evaluate rounds");
  add_train_flags(sv, sv_cfg.fit_config);

  // client
  auto* cl = app.add_subcommand("client", "Federated training client");
  cl->fallthrough();
  std::string cl_server, cl_images, cl_masks, cl_out;
  TrainConfig cl_cfg;
  cl->add_option("--server", cl_server, "Server address host:port")->required();
  cl->add_option("--images", cl_images, "Image directory")->required();
  cl->add_option("--masks", cl_masks, "Mask directory")->required();
  cl->add_option("--out", cl_out, "Where to save the final global model");
  add_train_flags(cl, cl_cfg);

  // infer
  auto* in = app.add_subcommand("infer", "Grid-prompted segmentation");
  in->fallthrough();
  std::string in_model, in_input, in_output;
  InferenceConfig in_cfg;
  in->add_option("--model", in_model, "Checkpoint path")->required();
  in->add_option("--input", in_input, "Image file or directory")->required();
  in->add_option("--output", in_output, "Directory for masks and overlays")->required();
  in->add_option("--points", in_cfg.n_points, "Grid prompt count");
  in->add_option("--overlap", in_cfg.overlap_threshold, "Candidate IoU rejection threshold");
  in->add_option("--min-area-frac", in_cfg.min_area_frac, "Component area floor fraction");
  in->add_option("--max-dim", in_cfg.max_dim, "Working-resolution bound");

  // monitor
  auto* mo = app.add_subcommand("monitor", "Acquisition loop against an image store");
  mo->fallthrough();
  AcquisitionConfig mo_cfg;
  bool mo_verify = false;
  mo->add_option("--store", mo_cfg.store_root, "Image store root directory")->required();
  mo->add_option("--registry", mo_cfg.registry_path, "Registry CSV path")->required();
  mo->add_option("--model", mo_cfg.model_path, "Checkpoint path")->required();
  mo->add_option("--interval", mo_cfg.poll_interval_s, "Poll interval in seconds");
  mo->add_flag("--verify", mo_verify, "Run one verification sweep and exit");
  mo->add_option("--masks", mo_cfg.mask_dir, "Mask output directory");
  mo->add_option("--max-polls", mo_cfg.max_polls, "Stop after this many polls (testing)");
  mo->add_option("--points", mo_cfg.infer.n_points, "Grid prompt count");

  // simulate
  auto* si = app.add_subcommand("simulate", "In-process federated run over loopback TCP");
  si->fallthrough();
  SimulationConfig si_cfg;
  std::string si_size = "96x96", si_partition = "iid";
  si->add_option("--clients", si_cfg.clients, "Client count");
  si->add_option("--rounds", si_cfg.rounds, "Communication rounds");
  si->add_option("--samples", si_cfg.samples, "Total procedural samples");
  si->add_option("--size", si_size, "Frame size WxH");
  si->add_option("--partition", si_partition, "iid|by-source")
      ->check(CLI::IsMember({"iid", "by-source"}));
  si->add_option("--save-dir", si_cfg.save_dir, "Checkpoint/CSV directory");
  si->add_option("--eval-samples", si_cfg.eval_samples, "Samples per client evaluate round");
  si->add_option("--holdout", si_cfg.holdout, "Held-out final evaluation size");
  si->add_option("--noise", si_cfg.noise, "Generator noise (iid partition)");
  si->add_option("--noise-lo", si_cfg.noise_lo, "First source noise (by-source)");
  si->add_option("--noise-hi", si_cfg.noise_hi, "Last source noise (by-source)");
  si->add_option("--timeout", si_cfg.round_timeout_s, "Straggler timeout in seconds");
  add_train_flags(si, si_cfg.train);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    set_log_level(log_level);

    if (app.got_subcommand(mg)) {
      MaskGenConfig cfg;
      if (!mg_config.empty()) cfg = MaskGenConfig::from_config(KeyValueConfig::load(mg_config));
      if (mg_nt->count() > 0) cfg.night_threshold = mg_night_threshold;
      if (mg_ma->count() > 0) cfg.min_area = mg_min_area;
      DirectoryStats stats = process_directory(mg_input, mg_output, cfg);
      spdlog::info("maskgen: {} processed ({} day, {} night), {} skipped", stats.processed,
                   stats.day, stats.night, stats.skipped);
      return 0;
    }
    if (app.got_subcommand(sy)) return run_synth(sy_count, sy_size, seed, sy_output, sy_noise,
                                                 sy_source);
    if (app.got_subcommand(tr)) {
      tr_cfg.seed = seed;
      return run_train(tr_images, tr_masks, tr_out, tr_init, tr_metrics, tr_cfg);
    }
    if (app.got_subcommand(sv)) {
      sv_cfg.min_available = sv_min_clients;
      sv_cfg.min_fit = sv_min_clients;
      sv_cfg.min_eval = sv_min_clients;
      sv_cfg.run_eval_rounds = !sv_no_eval;
      sv_cfg.fit_config.seed = seed;
      server_run(sv_cfg);
      return 0;
    }
    if (app.got_subcommand(cl)) {
      cl_cfg.seed = seed;
      ClientConfig cfg;
      cfg.server_address = cl_server;
      cfg.train = cl_cfg;
      cfg.model_out = cl_out;
      return client_run(cfg, load_pairs(cl_images, cl_masks, 0, 0));
    }
    if (app.got_subcommand(in)) return run_infer(in_model, in_input, in_output, in_cfg);
    if (app.got_subcommand(mo)) {
      if (!mo_cfg.today) mo_cfg.today = utc_today;
      return monitor_run(mo_cfg, mo_verify);
    }
    if (app.got_subcommand(si)) {
      si_cfg.seed = seed;
      si_cfg.train.seed = seed;
      return run_simulate_cmd(si_cfg, si_size, si_partition);
    }
  } catch (const std::exception& ex) {
    spdlog::error("{}", ex.what());
    return 1;
  }
  return 2;
}

}  // namespace foamfed
