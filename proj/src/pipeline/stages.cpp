#include "lesionforge/pipeline/stages.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "lesionforge/deep_cluster.hpp"
#include "lesionforge/dqn_agent.hpp"
#include "lesionforge/mask_candidates.hpp"
#include "lesionforge/nn/checkpoint.hpp"
#include "lesionforge/pipeline/artifacts.hpp"
#include "lesionforge/pipeline/image_io.hpp"
#include "lesionforge/superpixel.hpp"
#include "lesionforge/synth.hpp"

namespace lf::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::mutex log_mutex;

Warn logger(const StageOptions& options) {
  if (options.log) return options.log;
  return [](const std::string& msg) {
    std::lock_guard<std::mutex> lock(log_mutex);
    std::cerr << msg << "\n";
  };
}

fs::path labels_path(const PipelineConfig& c, const std::string& stage, const std::string& id) {
  return c.stage_dir(stage) / (id + ".labels.png");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

json fit_to_json(const SigmoidFit& f) {
  return {{"L", f.L}, {"k", f.k}, {"x0", f.x0}, {"rss", f.rss}, {"converged", f.converged},
          {"identified", f.identified}};
}

json dice_report_json(const DiceReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"image_id", row.image_id}, {"dice", row.dice}, {"action", static_cast<int>(row.action)}});
  }
  return {{"mean", r.mean}, {"sd", r.sd}, {"n", r.rows.size()}, {"rows", rows}, {"skipped", r.skipped}};
}

nn::Network<float> load_agent(const PipelineConfig& c) {
  const fs::path ckpt = c.stage_dir("train-rl") / "dqn.lfck";
  require_artifact(ckpt, "train-rl");
  nn::Network<float> net = build_dqn<float>(3, c.image_size, c.image_size, c.agent.architecture);
  nn::load_network(ckpt, net);
  return net;
}

}  // namespace

json selections_to_json(const std::string& run_id, std::vector<Selection> selections) {
  std::sort(selections.begin(), selections.end(),
            [](const Selection& a, const Selection& b) { return a.image_id < b.image_id; });
  json rows = json::array();
  for (const auto& s : selections) {
    rows.push_back({{"image_id", s.image_id}, {"cluster_id", s.cluster_id}, {"x", s.click.x}, {"y", s.click.y}});
  }
  return {{"run_id", run_id}, {"selections", rows}};
}

std::vector<Selection> selections_from_json(const json& doc) {
  std::vector<Selection> out;
  std::set<std::string> seen;
  for (const auto& row : doc.at("selections")) {
    Selection s;
    s.image_id = row.at("image_id").get<std::string>();
    s.cluster_id = row.at("cluster_id").get<int>();
    s.click = {row.at("x").get<int>(), row.at("y").get<int>()};
    if (!seen.insert(s.image_id).second) {
      throw std::runtime_error("selections list image '" + s.image_id + "' more than once");
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::size_t fanout_threads() {
  if (const char* env = std::getenv("LESIONFORGE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      throw std::invalid_argument(std::string("LESIONFORGE_THREADS must be a positive integer, got '") + env + "'");
    }
    return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (error) return;
        }
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

Dataset load_dataset(const PipelineConfig& config, const Warn& warn) {
  Dataset ds = ingest(config.data_dir, config.image_size, warn);
  if (ds.records.empty()) throw std::runtime_error("no readable images in " + config.data_dir.string());
  return ds;
}

LabelMap load_cluster_labels(const PipelineConfig& config, const std::string& image_id) {
  const fs::path p = labels_path(config, "cluster", image_id);
  require_artifact(p, "cluster");
  return io::load_labels(p);
}

std::vector<EvalRecord> test_records(const PipelineConfig& config, const Dataset& dataset, const Warn& warn) {
  std::vector<EvalRecord> out;
  for (const auto& id : dataset.test_ids) {
    const ImageRecord& rec = dataset.at(id);
    std::optional<PixelCoord> fiducial;
    if (rec.ground_truth && rec.ground_truth->count() > 0) {
      fiducial = fiducial_point(*rec.ground_truth);
    } else if (rec.click) {
      fiducial = rec.click;
    }
    if (!fiducial) {
      if (warn) warn("test image " + id + " has neither a ground-truth mask nor a click; skipped");
      continue;
    }
    const LabelMap labels = load_cluster_labels(config, id);
    const int cluster = labels.at(static_cast<std::size_t>(fiducial->x), static_cast<std::size_t>(fiducial->y));
    try {
      MaskPair pair = build_mask_pair(labels, cluster, fiducial, id);
      out.push_back({MaskSelectionEnv(rec.image, std::move(pair), config.env), rec.ground_truth});
    } catch (const std::invalid_argument& e) {
      if (warn) warn("test image " + id + ": " + e.what() + "; skipped");
    }
  }
  return out;
}

void run_superpixels(const PipelineConfig& config, const StageOptions& options) {
  const Warn log = logger(options);
  const Dataset ds = load_dataset(config, log);
  const fs::path dir = config.stage_dir("superpixels");
  fs::create_directories(dir);
  std::vector<json> rows(ds.records.size());
  parallel_for(ds.records.size(), fanout_threads(), [&](std::size_t i) {
    const ImageRecord& rec = ds.records[i];
    const SuperpixelMap sp = slic_segment(rec.image, config.slic);
    io::save_labels(labels_path(config, "superpixels", rec.id), sp.labels);
    rows[i] = {{"image_id", rec.id}, {"count", sp.count}, {"mean_size", sp.mean_size()}};
    log("[superpixels] " + rec.id + ": " + std::to_string(sp.count) + " regions");
  });
  write_json(dir / "index.json", {{"images", rows}});
  write_manifest(dir, "superpixels");
}

void run_cluster(const PipelineConfig& config, const StageOptions& options) {
  const Warn log = logger(options);
  const Dataset ds = load_dataset(config, log);
  const fs::path dir = config.stage_dir("cluster");
  fs::create_directories(dir);
  std::vector<json> rows(ds.records.size());
  parallel_for(ds.records.size(), fanout_threads(), [&](std::size_t i) {
    const ImageRecord& rec = ds.records[i];
    const fs::path sp_path = labels_path(config, "superpixels", rec.id);
    require_artifact(sp_path, "superpixels");
    SuperpixelMap sp;
    sp.labels = io::load_labels(sp_path);
    sp.count = *std::max_element(sp.labels.labels.begin(), sp.labels.labels.end()) + 1;
    ClusterTrainConfig cc = config.cluster;
    cc.seed = image_seed(config.seed, rec.id);
    const ClusterResult result = train_clustering(rec.image, sp, cc);
    io::save_labels(labels_path(config, "cluster", rec.id), result.labeling.labels);
    std::ostringstream csv;
    csv << "epoch,distinct_count,loss\n";
    for (const auto& e : result.labeling.epoch_history) {
      csv << e.epoch << "," << e.distinct_count << "," << fmt(e.loss) << "\n";
    }
    write_text(dir / (rec.id + ".history.csv"), csv.str());
    rows[i] = {{"image_id", rec.id},
               {"stop_epoch", result.stop_epoch},
               {"distinct_count", result.labeling.distinct_count},
               {"converged", result.labeling.converged}};
    log("[cluster] " + rec.id + ": " + std::to_string(result.labeling.distinct_count) + " clusters after " +
        std::to_string(result.stop_epoch) + " epochs" + (result.labeling.converged ? "" : " (not converged)"));
  });
  write_json(dir / "index.json", {{"images", rows}});
  write_manifest(dir, "cluster");
}

void run_candidates(const PipelineConfig& config, const StageOptions& options) {
  const Warn log = logger(options);
  const Dataset ds = load_dataset(config, log);
  const fs::path dir = config.stage_dir("candidates");
  fs::create_directories(dir);
  const std::set<std::string> train(ds.train_ids.begin(), ds.train_ids.end());
  std::vector<std::optional<Selection>> headless(ds.records.size());
  std::vector<json> rows(ds.records.size());
  parallel_for(ds.records.size(), fanout_threads(), [&](std::size_t i) {
    const ImageRecord& rec = ds.records[i];
    const LabelMap labels = load_cluster_labels(config, rec.id);
    const std::vector<MaskCandidate> candidates = extract_candidates(labels, config.candidates);
    json list = json::array();
    for (const auto& c : candidates) {
      const PixelCoord f = fiducial_point(c.pixels);
      const bool has_click = rec.click && c.pixels.contains(*rec.click);
      list.push_back({{"cluster_id", c.cluster_id},
                      {"size", c.size},
                      {"center_of_mass", {c.center_of_mass.x, c.center_of_mass.y}},
                      {"fiducial", {f.x, f.y}},
                      {"contains_click", has_click}});
      if (has_click && train.count(rec.id)) headless[i] = Selection{rec.id, c.cluster_id, *rec.click};
    }
    write_json(dir / (rec.id + ".json"),
               {{"image_id", rec.id}, {"total_pixels", labels.pixel_count()}, {"candidates", list}});
    rows[i] = {{"image_id", rec.id}, {"candidates", candidates.size()}};
    if (candidates.empty()) log("[candidates] " + rec.id + ": no cluster passes the size filter");
    if (train.count(rec.id) && !headless[i]) {
      log("[candidates] " + rec.id + ": no candidate contains the click; no headless selection");
    }
  });
  std::vector<Selection> selections;
  for (auto& s : headless) {
    if (s) selections.push_back(*s);
  }
  write_json(dir / "index.json", {{"images", rows}});
  write_json(dir / "headless_selections.json", selections_to_json(config.run_id, selections));
  write_manifest(dir, "candidates");
  log("[candidates] headless selections for " + std::to_string(selections.size()) + " of " +
      std::to_string(ds.train_ids.size()) + " training images");
}

void run_train_rl(const PipelineConfig& config, const StageOptions& options) {
  const Warn log = logger(options);
  const fs::path sel_path = options.selections.value_or(config.stage_dir("serve") / "selections.json");
  if (!fs::exists(sel_path)) {
    throw std::runtime_error("no selections file at " + sel_path.string() +
                             "; run `lesionforge serve` to pick masks interactively, or pass --selections " +
                             (config.stage_dir("candidates") / "headless_selections.json").string() +
                             " to train on the headless selections");
  }
  const std::vector<Selection> selections = selections_from_json(read_json(sel_path, "serve"));
  if (selections.empty()) throw std::runtime_error(sel_path.string() + " contains no selections");
  const Dataset ds = load_dataset(config, log);
  const std::set<std::string> train(ds.train_ids.begin(), ds.train_ids.end());

  std::vector<MaskSelectionEnv> train_envs;
  for (const auto& s : selections) {
    if (!train.count(s.image_id)) throw std::runtime_error("selection for '" + s.image_id + "' is not a training image");
    const LabelMap labels = load_cluster_labels(config, s.image_id);
    MaskPair pair = build_mask_pair(labels, s.cluster_id, s.click, s.image_id);
    train_envs.emplace_back(ds.at(s.image_id).image, std::move(pair), config.env);
  }
  const std::vector<EvalRecord> tests = test_records(config, ds, log);
  std::vector<MaskSelectionEnv> test_envs;
  for (const auto& r : tests) test_envs.push_back(r.env);

  log("[train-rl] " + std::to_string(train_envs.size()) + " training pairs, " + std::to_string(test_envs.size()) +
      " test pairs, " + std::to_string(config.agent.episodes) + " episodes");
  const TrainResult result = train_agent(train_envs, config.agent, test_envs, [&](const EpisodeLog& e) {
    if ((e.episode + 1) % 25 == 0) {
      log("[train-rl] episode " + std::to_string(e.episode + 1) + ": train accuracy " + fmt(e.train_accuracy) +
          (e.test_accuracy ? ", test accuracy " + fmt(*e.test_accuracy) : "") + ", loss " + fmt(e.loss));
    }
  });

  const fs::path dir = config.stage_dir("train-rl");
  fs::create_directories(dir);
  nn::save_network(dir / "dqn.lfck", result.network);

  std::vector<CurvePoint> train_curve, test_curve;
  std::ostringstream csv;
  csv << "episode,epsilon,mean_reward,train_greedy_accuracy,test_greedy_accuracy,loss,gradient_steps\n";
  json episodes = json::array();
  for (const auto& e : result.log.episodes) {
    csv << e.episode << "," << fmt(e.epsilon) << "," << fmt(e.mean_reward) << "," << fmt(e.train_accuracy) << ","
        << (e.test_accuracy ? fmt(*e.test_accuracy) : "") << "," << fmt(e.loss) << "," << e.gradient_steps << "\n";
    episodes.push_back({{"episode", e.episode},
                        {"epsilon", e.epsilon},
                        {"mean_reward", e.mean_reward},
                        {"train_accuracy", e.train_accuracy},
                        {"test_accuracy", e.test_accuracy ? json(*e.test_accuracy) : json(nullptr)},
                        {"loss", e.loss},
                        {"gradient_steps", e.gradient_steps}});
    train_curve.push_back({static_cast<double>(e.episode), e.train_accuracy});
    if (e.test_accuracy) test_curve.push_back({static_cast<double>(e.episode), *e.test_accuracy});
  }
  json fits = json::object();
  if (train_curve.size() >= 4) {
    const SigmoidFit f = fit_sigmoid(train_curve);
    fits["train"] = fit_to_json(f);
    csv << "# sigmoid fit train_greedy_accuracy: L=" << fmt(f.L) << " k=" << fmt(f.k) << " x0=" << fmt(f.x0)
        << " rss=" << fmt(f.rss) << "\n";
  }
  if (test_curve.size() >= 4) {
    const SigmoidFit f = fit_sigmoid(test_curve);
    fits["test"] = fit_to_json(f);
    csv << "# sigmoid fit test_greedy_accuracy: L=" << fmt(f.L) << " k=" << fmt(f.k) << " x0=" << fmt(f.x0)
        << " rss=" << fmt(f.rss) << "\n";
  }
  write_text(dir / "trainlog.csv", csv.str());
  json train_ids = json::array();
  for (const auto& env : train_envs) train_ids.push_back(env.pair().image_id);
  write_json(dir / "trainlog.json", {{"episodes", episodes},
                                     {"sigmoid_fit", fits},
                                     {"train_images", train_ids},
                                     {"buffer_rows", result.buffer_rows},
                                     {"parameter_count", result.network.parameter_count()}});
  write_manifest(dir, "train-rl");
}

void run_predict(const PipelineConfig& config, const StageOptions& options) {
  const Warn log = logger(options);
  nn::Network<float> net = load_agent(config);
  const Dataset ds = load_dataset(config, log);
  const std::vector<EvalRecord> records = test_records(config, ds, log);
  const fs::path dir = config.stage_dir("predict");
  fs::create_directories(dir);
  json rows = json::array();
  for (const auto& r : records) {
    const MaskPair& pair = r.env.pair();
    const Prediction p = predict(net, *r.env.reset().tensor);
    const BinaryMask& mask = predicted_mask(p.action, pair);
    const ImageRecord& rec = ds.at(pair.image_id);
    io::save_mask(dir / (pair.image_id + ".mask.png"), mask);
    io::save_mask(dir / (pair.image_id + ".native.mask.png"),
                  io::resize_nearest(mask, rec.original_width, rec.original_height));
    rows.push_back({{"image_id", pair.image_id},
                    {"action", static_cast<int>(p.action)},
                    {"q", {p.q[0], p.q[1]}},
                    {"fiducial", {pair.fiducial.x, pair.fiducial.y}},
                    {"mask_pixels", mask.count()}});
  }
  write_json(dir / "predictions.json", {{"predictions", rows}});
  write_manifest(dir, "predict");
  log("[predict] " + std::to_string(records.size()) + " test images");
}

void run_evaluate(const PipelineConfig& config, const StageOptions& options) {
  const Warn log = logger(options);
  nn::Network<float> net = load_agent(config);
  const Dataset ds = load_dataset(config, log);
  const std::vector<EvalRecord> records = test_records(config, ds, log);
  const DiceReport agent = evaluate_testset(net, records, std::nullopt, log);
  const DiceReport baseline = evaluate_testset(net, records, Action::Complement);
  const fs::path dir = config.stage_dir("evaluate");
  fs::create_directories(dir);
  write_json(dir / "dice.json", dice_report_json(agent));
  write_json(dir / "baseline_complement.json", dice_report_json(baseline));
  std::ostringstream csv;
  csv << "image_id,dice,action\n";
  for (const auto& row : agent.rows) csv << row.image_id << "," << fmt(row.dice) << "," << static_cast<int>(row.action) << "\n";
  write_text(dir / "dice.csv", csv.str());

  json comparison = {{"test", "welch"},
                     {"a", "agent"},
                     {"b", "complement_baseline"},
                     {"mean_a", agent.mean},
                     {"sd_a", agent.sd},
                     {"mean_b", baseline.mean},
                     {"sd_b", baseline.sd}};
  try {
    const ComparisonReport c = compare(agent, baseline);
    comparison["t"] = c.welch.t;
    comparison["df"] = c.welch.df;
    comparison["p"] = c.welch.p;
  } catch (const std::invalid_argument& e) {
    comparison["error"] = e.what();
    log(std::string("[evaluate] comparison unavailable: ") + e.what());
  }
  write_json(dir / "comparison.json", comparison);
  write_manifest(dir, "evaluate");
  log("[evaluate] mean dice " + fmt(agent.mean) + " over " + std::to_string(agent.rows.size()) + " images");
}

json run_report(const PipelineConfig& config, const StageOptions& options) {
  const Warn log = logger(options);
  const json dice = read_json(config.stage_dir("evaluate") / "dice.json", "evaluate");
  const json baseline = read_json(config.stage_dir("evaluate") / "baseline_complement.json", "evaluate");
  const json comparison = read_json(config.stage_dir("evaluate") / "comparison.json", "evaluate");
  const json trainlog = read_json(config.stage_dir("train-rl") / "trainlog.json", "train-rl");
  const json clusters = read_json(config.stage_dir("cluster") / "index.json", "cluster");

  json curve = json::array();
  std::optional<int> first_perfect;
  for (const auto& e : trainlog.at("episodes")) {
    const json& acc = e.at("test_accuracy");
    curve.push_back({{"episode", e.at("episode")}, {"train_accuracy", e.at("train_accuracy")}, {"test_accuracy", acc}});
    if (!first_perfect && acc.is_number() && acc.get<double>() == 1.0) first_perfect = e.at("episode").get<int>();
  }
  const bool synthetic = fs::exists(config.data_dir / "synth.json");
  json cfg = config.to_json();
  cfg.erase("data");
  cfg.erase("out");
  cfg.erase("run_id");

  json report = {
      {"data",
       {{"synthetic_proxy", synthetic},
        {"note", synthetic ? "scores are on generated phantom images and are not comparable to clinical data"
                           : "scores are on the supplied dataset"}}},
      {"clustering", clusters.at("images")},
      {"dice", dice},
      {"baseline_complement", baseline},
      {"comparison", comparison},
      {"rl",
       {{"curve", curve},
        {"sigmoid_fit", trainlog.at("sigmoid_fit")},
        {"first_perfect_test_episode", first_perfect ? json(*first_perfect) : json(nullptr)},
        {"train_images", trainlog.at("train_images")}}},
      {"config", cfg}};
  const fs::path dir = config.stage_dir("report");
  fs::create_directories(dir);
  write_json(dir / "report.json", report);
  write_manifest(dir, "report");
  log("[report] " + (dir / "report.json").string());
  return report;
}

json run_all(const PipelineConfig& config, const StageOptions& options) {
  run_superpixels(config, options);
  run_cluster(config, options);
  run_candidates(config, options);
  StageOptions rl = options;
  if (!rl.selections) rl.selections = config.stage_dir("candidates") / "headless_selections.json";
  run_train_rl(config, rl);
  run_predict(config, options);
  run_evaluate(config, options);
  return run_report(config, options);
}

void run_synth(const fs::path& dir, std::size_t count, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("synth: count must be at least 1");
  const std::vector<SynthCase> cases = synth_generate(count, seed);
  write_synth_dataset(dir, cases);
  write_json(dir / "synth.json", {{"count", count}, {"seed", seed}});
}

}  // namespace lf::pipeline
