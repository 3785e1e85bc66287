// Copyright 2026 The Plate Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>
#include <json.hpp>

#include "plate/augment.hpp"
#include "plate/dataset.hpp"
#include "plate/evaluation.hpp"
#include "plate/image.hpp"
#include "plate/model.hpp"
#include "plate/pipeline.hpp"
#include "plate/random.hpp"
#include "plate/service.hpp"
#include "plate/synth.hpp"
#include "plate/trainer.hpp"

namespace fs = std::filesystem;
using namespace plate;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  bool json = false;
  int threads = 0;
};

void emit(const Globals& g, const nlohmann::json& j, const std::string& text) {
  if (g.json) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << text;
  }
}

struct TaxonomyOptions {
  std::string file;
  bool no_merge = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--taxonomy", file, "merge rules, one 'raw -> final' per line")->check(CLI::ExistingFile);
    cmd->add_flag("--no-merge", no_merge, "keep every raw label as its own class");
  }
  ClassTaxonomy get() const {
    if (no_merge) {
      return {};
    }
    return file.empty() ? ClassTaxonomy::default_merges() : ClassTaxonomy::load(file);
  }
};

void add_policy_options(CLI::App* cmd, AugmentationPolicy& p) {
  cmd->add_option("--threshold", p.class_threshold, "augment labels with fewer training originals than this");
  cmd->add_option("--target", p.target_count, "training count to top small labels up to");
  cmd->add_option("--flip", p.flip_probability, "horizontal flip probability");
  cmd->add_option("--crop-area-min", p.crop_area_min);
  cmd->add_option("--crop-area-max", p.crop_area_max);
  cmd->add_option("--noise-min", p.noise_sigma_min, "Gaussian noise sigma range, 0-255 scale");
  cmd->add_option("--noise-max", p.noise_sigma_max);
  cmd->add_option("--rotation", p.rotation_max_deg, "maximum rotation in degrees");
  cmd->add_option("--translate", p.translate_max, "maximum shift as a fraction of the size");
  cmd->add_option("--scale-min", p.scale_min);
  cmd->add_option("--scale-max", p.scale_max);
  cmd->add_option("--contrast-min", p.contrast_min);
  cmd->add_option("--contrast-max", p.contrast_max);
}

void add_train_options(CLI::App* cmd, TrainConfig& t) {
  cmd->add_option("--epochs", t.epochs);
  cmd->add_option("--batch-size", t.batch_size);
  cmd->add_option("--lr", t.head_learning_rate, "head learning rate");
  cmd->add_option("--patience", t.patience, "epochs without improvement before stopping");
  cmd->add_option("--min-improvement", t.min_improvement);
  cmd->add_flag("!--no-early-stop", t.early_stop, "always run every epoch");
}

std::optional<FeatureStore> open_store(const std::string& path, const Model& model) {
  if (path.empty()) {
    return std::nullopt;
  }
  return FeatureStore::open(path, backbone_fingerprint(model), model.spec().head_width);
}

std::string format_prediction(const Prediction& p) {
  std::string out;
  char line[64];
  for (const auto& s : p.top) {
    std::snprintf(line, sizeof line, " %.9g\n", static_cast<double>(s.probability));
    out += s.label + line;
  }
  return out;
}

Tensor calibration_batch(const Model& model, const std::string& corpus, std::uint64_t seed) {
  const int r = model.spec().resolution;
  const std::size_t plane = static_cast<std::size_t>(3) * r * r;
  std::vector<float> values;
  if (!corpus.empty()) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(corpus)) {
      const auto ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) {
        files.push_back(e.path());
      }
    }
    std::sort(files.begin(), files.end());
    std::mt19937_64 gen(seed);
    std::shuffle(files.begin(), files.end(), gen);
    for (const auto& f : files) {
      if (values.size() >= 32 * plane) {
        break;
      }
      try {
        const auto t = prepare_image(model, read_image(f));
        values.insert(values.end(), t.data().begin(), t.data().end());
      } catch (const ImageError&) {
      }
    }
    if (values.empty()) {
      throw std::runtime_error("no decodable images under " + corpus);
    }
  } else {
    std::mt19937_64 gen(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    values.resize(16 * plane);
    for (auto& v : values) {
      v = normal(gen);
    }
  }
  const auto n = static_cast<std::int64_t>(values.size() / plane);
  return Tensor(Shape4{n, 3, r, r}, std::move(values));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Food image classification: dataset preparation, training, evaluation and serving"};
  app.require_subcommand(1);
  app.fallthrough();
  app.failure_message([](const CLI::App*, const CLI::Error& e) { return "plate: error: " + std::string(e.what()) + "\n"; });
  app.set_config("--config", "", "key-value config file; keys are option names, [section] per subcommand");
  Globals g;
  app.add_option("--seed", g.seed, "seed for every randomized step");
  app.add_flag("--json", g.json, "machine-readable output");
  app.add_option("--threads", g.threads, "worker threads, 0 for all cores");

  // synth
  auto* synth = app.add_subcommand("synth", "write a procedural test corpus");
  std::string synth_out, synth_kind = "small";
  synth->add_option("out", synth_out, "output directory")->required();
  synth->add_option("--kind", synth_kind, "small (300 images, 27 raw labels) or threshold (23 labels)")
      ->check(CLI::IsMember({"small", "threshold"}));

  // init
  auto* init = app.add_subcommand("init", "write randomly initialized MobileNet-v2 weights");
  std::string init_out, init_preset = "full", init_corpus;
  int init_classes = 1000;
  init->add_option("out", init_out, "weight file")->required();
  init->add_option("--preset", init_preset, "full (224 input, 1280 features) or small (32 input, 24 features)")
      ->check(CLI::IsMember({"full", "small"}));
  init->add_option("--classes", init_classes, "classifier outputs");
  init->add_option("--calibrate-on", init_corpus, "image directory for batch-norm statistics")
      ->check(CLI::ExistingDirectory);

  // scan
  auto* scan = app.add_subcommand("scan", "build a split manifest from <root>/<label>/<images>");
  std::string scan_root, scan_out;
  double train_fraction = 0.9;
  int folds = 10;
  TaxonomyOptions scan_tax;
  scan->add_option("corpus", scan_root)->required()->check(CLI::ExistingDirectory);
  scan->add_option("-o,--out", scan_out, "manifest file")->required();
  scan->add_option("--train-fraction", train_fraction);
  scan->add_option("--folds", folds, "cross-validation folds over the training split");
  scan_tax.add(scan);

  // augment
  auto* augment = app.add_subcommand("augment", "top up small labels with augmented copies");
  std::string aug_manifest, aug_out;
  AugmentationPolicy policy;
  augment->add_option("manifest", aug_manifest)->required()->check(CLI::ExistingFile);
  augment->add_option("-o,--out", aug_out, "directory for images, journal and the new manifest")->required();
  add_policy_options(augment, policy);

  // train
  auto* train = app.add_subcommand("train", "train the classifier head on a manifest's training split");
  std::string train_manifest, train_weights, train_out, train_store;
  TrainConfig train_cfg;
  train->add_option("manifest", train_manifest)->required()->check(CLI::ExistingFile);
  train->add_option("--weights", train_weights, "backbone weights")->required()->check(CLI::ExistingFile);
  train->add_option("-o,--out", train_out, "trained model file")->required();
  train->add_option("--feature-store", train_store, "reusable feature cache file");
  add_train_options(train, train_cfg);

  // eval
  auto* eval = app.add_subcommand("eval", "top-1 / top-5 on a manifest's test split");
  std::string eval_manifest, eval_weights, eval_csv, eval_store;
  int eval_cv = 0;
  TrainConfig eval_train;
  eval->add_option("manifest", eval_manifest)->required()->check(CLI::ExistingFile);
  eval->add_option("--weights", eval_weights, "trained model")->required()->check(CLI::ExistingFile);
  eval->add_option("--mispredictions", eval_csv, "CSV of wrong top-1 predictions");
  eval->add_option("--cv", eval_cv, "also run k-fold cross-validation over the training split");
  eval->add_option("--feature-store", eval_store, "reusable feature cache file");
  add_train_options(eval, eval_train);

  // run
  auto* run = app.add_subcommand("run", "scan, augment, train and evaluate in one go");
  PipelineConfig run_cfg;
  std::string run_corpus, run_weights, run_dir;
  TaxonomyOptions run_tax;
  bool run_no_augment = false, run_no_cv = false;
  run->add_option("corpus", run_corpus)->required()->check(CLI::ExistingDirectory);
  run->add_option("--weights", run_weights, "backbone weights")->required()->check(CLI::ExistingFile);
  run->add_option("--work-dir", run_dir, "output directory")->required();
  run->add_option("--train-fraction", run_cfg.train_fraction);
  run->add_option("--folds", run_cfg.folds);
  run->add_flag("--no-augment", run_no_augment);
  run->add_flag("--no-cv", run_no_cv);
  run_tax.add(run);
  add_policy_options(run, run_cfg.policy);
  add_train_options(run, run_cfg.train);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "compare consolidation and augmentation settings");
  PipelineConfig abl_cfg;
  std::string abl_corpus, abl_weights, abl_dir;
  std::vector<std::string> abl_cells;
  TaxonomyOptions abl_tax;
  ablate->add_option("corpus", abl_corpus)->required()->check(CLI::ExistingDirectory);
  ablate->add_option("--weights", abl_weights, "backbone weights")->required()->check(CLI::ExistingFile);
  ablate->add_option("--work-dir", abl_dir, "output directory")->required();
  ablate->add_option("--cells", abl_cells, "subset of unmerged_augmented, merged_plain, merged_augmented, unmerged_plain")
      ->delimiter(',');
  ablate->add_option("--train-fraction", abl_cfg.train_fraction);
  abl_tax.add(ablate);
  add_policy_options(ablate, abl_cfg.policy);
  add_train_options(ablate, abl_cfg.train);

  // classify
  auto* classify = app.add_subcommand("classify", "top-k labels for one image");
  std::string cls_image, cls_weights;
  int cls_k = 5;
  classify->add_option("image", cls_image)->required()->check(CLI::ExistingFile);
  classify->add_option("--weights", cls_weights, "trained model")->required()->check(CLI::ExistingFile);
  classify->add_option("--k", cls_k, "number of labels");

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP classification service");
  ServiceConfig svc;
  std::string svc_weights;
  serve->add_option("--weights", svc_weights, "trained model")->required()->check(CLI::ExistingFile);
  serve->add_option("--host", svc.host);
  serve->add_option("--port", svc.port);
  serve->add_option("--k", svc.default_k, "default number of labels");
  serve->add_option("--max-upload", svc.max_upload_bytes, "largest accepted image in bytes");
  serve->add_option("--timeout", svc.timeout_seconds, "socket timeout in seconds");
  serve->add_option("--workers", svc.worker_threads, "request handler threads");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      auto cfg = synth_kind == "small" ? small_pipeline_corpus() : threshold_corpus();
      if (app.count("--seed") > 0) {
        cfg.seed = g.seed;
      }
      const auto s = write_synthetic_corpus(synth_out, cfg);
      emit(g, {{"images", s.images}, {"corrupt", s.corrupt}, {"root", synth_out}},
           "wrote " + std::to_string(s.images) + " images to " + synth_out + "\n");
    } else if (init->parsed()) {
      ModelSpec spec;
      if (init_preset == "small") {
        spec.resolution = 32;
        spec.stem_channels = 8;
        spec.settings = {{1, 8, 1, 1}, {4, 12, 2, 2}};
        spec.head_width = 24;
      }
      spec.num_classes = init_classes;
      auto model = Model::build(spec, g.seed);
      model = model.calibrate_batchnorm(calibration_batch(model, init_corpus, g.seed));
      save_weights(model, init_out);
      emit(g,
           {{"weights", init_out},
            {"parameters", model.total_parameter_count()},
            {"model_version", weight_file_version(init_out)}},
           "wrote " + init_out + " (" + std::to_string(model.total_parameter_count()) + " parameters)\n");
    } else if (scan->parsed()) {
      auto prepared = prepare_dataset(scan_root, scan_tax.get(), train_fraction, folds, g.seed, g.threads);
      prepared.manifest.write(scan_out);
      const auto stats = ClassStats::of(prepared.manifest);
      std::string text = prepared.report.to_text();
      for (const auto& w : prepared.warnings) {
        text += "warning: " + w + "\n";
      }
      text += stats.to_text();
      text += "wrote " + scan_out + "\n";
      emit(g,
           {{"scan", prepared.report.to_json()},
            {"warnings", prepared.warnings},
            {"labels", prepared.manifest.labels},
            {"stats", stats.to_json()},
            {"manifest", scan_out}},
           text);
    } else if (augment->parsed()) {
      const auto manifest = DatasetManifest::read(aug_manifest);
      policy.seed = mix_seed(g.seed, "augment");
      std::vector<std::string> warnings;
      const auto plan = plan_augmentation(manifest, policy, &warnings);
      const auto result = materialize(manifest, plan, aug_out, g.threads);
      const auto out_manifest = fs::path(aug_out) / "manifest.jsonl";
      result.manifest.write(out_manifest);
      const auto report = augmentation_report(result.before, result.after);
      std::ofstream(fs::path(aug_out) / "augmentation_report.txt") << report;
      std::string text = report;
      for (const auto& w : warnings) {
        text += "warning: " + w + "\n";
      }
      text += "added " + std::to_string(plan.size()) + " samples (" + std::to_string(result.resumed) +
              " resumed); wrote " + out_manifest.string() + "\n";
      emit(g,
           {{"added", plan.size()},
            {"written", result.written},
            {"resumed", result.resumed},
            {"before", result.before.to_json()},
            {"after", result.after.to_json()},
            {"warnings", warnings},
            {"manifest", out_manifest.string()}},
           text);
    } else if (train->parsed()) {
      const auto manifest = DatasetManifest::read(train_manifest);
      const auto backbone = load_weights(train_weights);
      auto store = open_store(train_store, backbone);
      train_cfg.seed = mix_seed(g.seed, "train");
      const auto trained = train_on_manifest(backbone, manifest, train_cfg, store ? &*store : nullptr, g.threads);
      save_weights(trained.model, train_out);
      auto j = trained.result.to_json();
      j["model"] = train_out;
      char line[160];
      std::snprintf(line, sizeof line, "trained %zu epochs on %zu samples: loss %.6f, train accuracy %.2f%%\n",
                    trained.result.epoch_loss.size(), trained.extraction.cache.size(),
                    trained.result.epoch_loss.empty() ? 0.0 : trained.result.epoch_loss.back(),
                    100.0 * trained.result.train_accuracy);
      std::string text = line;
      const bool has_test = std::any_of(manifest.records.begin(), manifest.records.end(),
                                        [](const SampleRecord& r) { return r.split == Split::test; });
      if (has_test) {
        const auto ev = evaluate_on_manifest(trained.model, manifest, store ? &*store : nullptr, g.threads);
        j["test"] = ev.metrics.to_json();
        text += ev.metrics.table();
      }
      if (store) {
        store->save(train_store);
      }
      text += "wrote " + train_out + "\n";
      emit(g, j, text);
    } else if (eval->parsed()) {
      const auto manifest = DatasetManifest::read(eval_manifest);
      const auto model = load_weights(eval_weights);
      auto store = open_store(eval_store, model);
      std::vector<RejectedFile> skipped;
      const auto ev = evaluate_on_manifest(model, manifest, store ? &*store : nullptr, g.threads, &skipped);
      nlohmann::json j{{"metrics", ev.metrics.to_json()}};
      std::string text = ev.metrics.table();
      for (const auto& s : skipped) {
        text += "skipped " + s.path + ": " + s.reason + "\n";
      }
      if (!eval_csv.empty()) {
        std::ofstream(eval_csv) << ev.mispredictions_csv();
        text += "wrote " + eval_csv + "\n";
      }
      if (eval_cv > 0) {
        eval_train.seed = mix_seed(g.seed, "train");
        const auto cv = cross_validate_manifest(model, manifest, eval_train, eval_cv, store ? &*store : nullptr,
                                                g.threads);
        j["cross_validation"] = cv.to_json();
        text += cv.table();
      }
      if (store) {
        store->save(eval_store);
      }
      emit(g, j, text);
    } else if (run->parsed()) {
      run_cfg.corpus_root = run_corpus;
      run_cfg.weights = run_weights;
      run_cfg.work_dir = run_dir;
      run_cfg.taxonomy = run_tax.get();
      run_cfg.consolidate = !run_tax.no_merge;
      run_cfg.augment = !run_no_augment;
      run_cfg.cross_validation = !run_no_cv;
      run_cfg.seed = g.seed;
      run_cfg.threads = g.threads;
      const auto r = run_pipeline(run_cfg);
      nlohmann::json j{{"num_classes", r.num_classes},
                       {"metrics", r.evaluation.metrics.to_json()},
                       {"train", r.train.to_json()},
                       {"work_dir", run_dir}};
      std::string text = augmentation_report(r.before, r.after) + "\n" + r.evaluation.metrics.table();
      if (r.cross_validation) {
        j["cross_validation"] = r.cross_validation->to_json();
        text += "\n" + r.cross_validation->table();
      }
      text += "artifacts in " + run_dir + "\n";
      emit(g, j, text);
    } else if (ablate->parsed()) {
      abl_cfg.corpus_root = abl_corpus;
      abl_cfg.weights = abl_weights;
      abl_cfg.work_dir = abl_dir;
      abl_cfg.taxonomy = abl_tax.get();
      abl_cfg.seed = g.seed;
      abl_cfg.threads = g.threads;
      std::vector<AblationCell> cells;
      if (abl_cells.empty()) {
        cells = standard_ablation_grid();
      } else {
        for (const auto& name : abl_cells) {
          bool found = false;
          for (const bool c : {false, true}) {
            for (const bool a : {false, true}) {
              if (AblationCell{c, a}.name() == name) {
                cells.push_back({c, a});
                found = true;
              }
            }
          }
          if (!found) {
            throw std::invalid_argument("unknown ablation cell '" + name + "'");
          }
        }
      }
      const auto report = run_ablation(abl_cfg, cells);
      emit(g, report.to_json(), report.table());
    } else if (classify->parsed()) {
      const auto model = load_weights(cls_weights);
      const auto bytes = read_file_bytes(cls_image);
      const auto p = classify_image(model, bytes, cls_k);
      emit(g, prediction_json(p, weight_file_version(cls_weights)), format_prediction(p));
    } else if (serve->parsed()) {
      svc.weights = svc_weights;
      sigset_t signals;
      sigemptyset(&signals);
      sigaddset(&signals, SIGINT);
      sigaddset(&signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &signals, nullptr);
      ClassificationService service(svc);
      const int port = service.start();
      std::cerr << "listening on " << svc.host << ":" << port << "\n";
      service.load();
      std::cerr << "loaded " << svc_weights << "\n";
      int sig = 0;
      sigwait(&signals, &sig);
      service.stop();
    }
  } catch (const std::exception& e) {
    std::cerr << "plate: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
