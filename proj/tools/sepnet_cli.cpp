#include <CLI11.hpp>

#include <iostream>

#include "sepnet/datapipe.hpp"
#include "sepnet/gradcheck.hpp"
#include "sepnet/svg.hpp"

namespace {

using namespace sepnet;

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

struct ArchFlags {
  int64_t image_size = 224;
  int64_t num_classes = 4;
  int64_t stem_channels = 8;
  std::string blocks = "16:2,32:2,64:2,64:1";
  int64_t head_units = 2500;
  double dropout = 0.5;

  void attach(CLI::App* cmd) {
    cmd->add_option("--image-size", image_size, "Input height/width");
    cmd->add_option("--num-classes", num_classes, "Number of output classes");
    cmd->add_option("--stem-channels", stem_channels, "Stem conv output channels");
    cmd->add_option("--blocks", blocks,
                    "Separable blocks as out_channels:stride, comma separated");
    cmd->add_option("--head-units", head_units, "Hidden units in the classifier head");
    cmd->add_option("--dropout", dropout, "Head dropout rate");
  }

  ArchConfig to_config() const {
    ArchConfig cfg;
    cfg.in_height = cfg.in_width = image_size;
    cfg.num_classes = num_classes;
    cfg.stem_channels = stem_channels;
    cfg.head_units = head_units;
    cfg.dropout_rate = dropout;
    cfg.blocks.clear();
    std::istringstream in(blocks);
    std::string item;
    while (std::getline(in, item, ',')) {
      const auto colon = item.find(':');
      if (colon == std::string::npos)
        throw ConfigError("bad --blocks entry (want out_channels:stride): " + item);
      cfg.blocks.emplace_back(std::stoll(item.substr(0, colon)),
                              std::stoll(item.substr(colon + 1)));
    }
    if (cfg.blocks.empty()) throw ConfigError("--blocks must name at least one block");
    return cfg;
  }

  void echo() const {
    std::cout << "config: image_size = " << image_size << "\n"
              << "config: num_classes = " << num_classes << "\n"
              << "config: stem_channels = " << stem_channels << "\n"
              << "config: blocks = " << blocks << "\n"
              << "config: head_units = " << head_units << "\n"
              << "config: dropout = " << dropout << "\n";
  }
};

std::string fmt_double(double v) {
  std::ostringstream out;
  out.precision(9);
  out << v;
  return out.str();
}

int cmd_prepare(const std::string& data_root, double test_fraction,
                std::vector<int64_t> targets, uint64_t seed, const std::string& out_path) {
  std::vector<std::string> warnings;
  DatasetManifest m = build_manifest(data_root, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  warnings.clear();
  patient_split(m, test_fraction, seed, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  std::array<int64_t, kNumClasses> tgt{};
  const auto pre = m.class_counts();
  for (int c = 0; c < kNumClasses; ++c)
    tgt[static_cast<size_t>(c)] =
        targets.empty() ? pre.n[static_cast<size_t>(c)][0][0] : targets[static_cast<size_t>(c)];
  augment_plan(m, tgt, seed);
  write_manifest(m, out_path);

  const auto counts = m.class_counts();
  std::cout << "class                     train_orig  train_total  test\n";
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& n = counts.n[static_cast<size_t>(c)];
    std::cout << std::left << std::setw(25) << kClassNames[static_cast<size_t>(c)] << ' '
              << std::right << std::setw(10) << n[0][0] << "  " << std::setw(11)
              << n[0][0] + n[0][1] << "  " << std::setw(4) << n[1][0] + n[1][1] << "\n";
  }
  std::cout << "manifest written: " << out_path << "\n";
  return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& data_root,
              const ArchFlags& arch, TrainConfig tc, const std::string& freeze,
              const std::string& init_weights, const std::string& out_weights,
              const std::string& out_log) {
  tc.validate();
  arch.echo();
  std::cout << "config: epochs = " << tc.epochs << "\n"
            << "config: batch_size = " << tc.batch_size << "\n"
            << "config: learning_rate = " << tc.learning_rate << "\n"
            << "config: seed = " << tc.seed << "\n"
            << "config: freeze = " << freeze << "\n";

  const DatasetManifest m = read_manifest(manifest_path);
  auto graph = build_model<float>(arch.to_config());
  graph.init_params(tc.seed);
  if (!init_weights.empty()) {
    const auto report = load_weights(graph, init_weights, /*allow_partial=*/true, tc.seed);
    std::cout << "loaded " << report.loaded.size() << " tensors from " << init_weights
              << "; " << report.missing.size() << " freshly initialized\n";
    for (const auto& n : report.missing) std::cout << "  missing: " << n << "\n";
  }
  FreezePolicy policy = FreezePolicy::none();
  if (freeze == "feature-extractor") policy = FreezePolicy::feature_extractor();
  else if (freeze != "none") throw ConfigError("unknown --freeze policy: " + freeze);
  const int64_t frozen = apply_freeze_policy(graph, policy);
  if (frozen) std::cout << "frozen parameters: " << frozen << "\n";

  const int64_t hw = arch.image_size;
  Dataset<float> train_ds = load_dataset(m, data_root, Split::Train, hw, hw);
  Dataset<float> test_ds = load_dataset(m, data_root, Split::Test, hw, hw);
  if (train_ds.size() == 0) throw ConfigError("manifest has no train records");
  std::vector<Batch<float>> test_batches;
  if (test_ds.size() > 0) test_batches = make_batches(test_ds, tc.batch_size, 0, 0, false);

  AdamState<float> adam;
  std::ostringstream csv;
  csv << "epoch,train_loss,train_accuracy,test_loss,test_accuracy\n";
  for (int64_t e = 0; e < tc.epochs; ++e) {
    auto batches = make_batches(train_ds, tc.batch_size, tc.seed, e, tc.shuffle);
    auto [loss, acc] = train_epoch(graph, batches, adam, tc, e);
    if (!std::isfinite(loss))
      throw NumericalError("training loss is not finite at epoch " + std::to_string(e + 1));
    double tloss = 0, tacc = 0;
    if (!test_batches.empty()) {
      auto ev = evaluate(graph, test_batches);
      tloss = ev.loss;
      tacc = report(ev.confusion).overall_accuracy;
    }
    csv << (e + 1) << ',' << fmt_double(loss) << ',' << fmt_double(acc) << ','
        << fmt_double(tloss) << ',' << fmt_double(tacc) << "\n";
    std::cout << "epoch " << (e + 1) << "/" << tc.epochs << "  train_loss="
              << fmt_double(loss) << " train_acc=" << fmt_double(acc)
              << " test_loss=" << fmt_double(tloss) << " test_acc=" << fmt_double(tacc)
              << "\n";
  }
  save_weights(graph, out_weights);
  write_file_atomic(out_log, csv.str());
  std::cout << "weights written: " << out_weights << "\nlog written: " << out_log << "\n";
  return 0;
}

int cmd_eval(const std::string& manifest_path, const std::string& data_root,
             const std::string& split_name, const ArchFlags& arch,
             const std::string& weights, const std::string& out_prefix,
             const std::string& from_matrix) {
  if (!from_matrix.empty()) {
    const auto matrix = confusion_from_tsv(read_file(from_matrix));
    std::cout << report_kv(report(matrix));
    return 0;
  }
  const Split split = split_name == "train" ? Split::Train : Split::Test;
  const DatasetManifest m = read_manifest(manifest_path);
  auto graph = build_model<float>(arch.to_config());
  graph.init_params(0);
  load_weights(graph, weights, /*allow_partial=*/false);
  const int64_t hw = arch.image_size;
  Dataset<float> ds = load_dataset(m, data_root, split, hw, hw);
  if (ds.size() == 0) throw ConfigError("manifest has no records in split " + split_name);
  auto ev = evaluate(graph, make_batches(ds, 16, 0, 0, false));
  ev.confusion.class_names = kClassNames;
  const auto rep = report(ev.confusion);
  write_file_atomic(out_prefix + ".matrix.tsv", confusion_to_tsv(ev.confusion));
  write_file_atomic(out_prefix + ".txt", report_text(rep));
  write_file_atomic(out_prefix + ".kv", report_kv(rep));
  std::cout << report_text(rep);
  std::cout << "loss=" << fmt_double(ev.loss) << "\n";
  std::cout << "report written: " << out_prefix << ".{matrix.tsv,txt,kv}\n";
  return 0;
}

int cmd_predict(const ArchFlags& arch, const std::string& weights,
                const std::vector<std::string>& images) {
  auto graph = build_model<float>(arch.to_config());
  graph.init_params(0);
  load_weights(graph, weights, /*allow_partial=*/false);
  const int64_t hw = arch.image_size;
  std::vector<std::string> names = kClassNames;
  if (arch.num_classes != kNumClasses) {
    names.clear();
    for (int64_t i = 0; i < arch.num_classes; ++i) names.push_back("class" + std::to_string(i));
  }
  for (const auto& path : images) {
    ImageBuffer img = resize_bilinear(read_image(path), hw, hw);
    Tensor<float> t({1, 1, hw, hw});
    for (size_t i = 0; i < img.pixels.size(); ++i) t.data[i] = img.pixels[i];
    auto fr = graph.forward_infer(t);
    const int cls = argmax_row(fr.probabilities, 0);
    std::cout << path << '\t' << names[static_cast<size_t>(cls)];
    std::cout << std::fixed << std::setprecision(6);
    for (int64_t k = 0; k < fr.probabilities.dim(1); ++k)
      std::cout << '\t' << fr.probabilities.at(0, k);
    std::cout.unsetf(std::ios::fixed);
    std::cout << "\n";
  }
  return 0;
}

int cmd_plot(const std::string& log_path, const std::string& out_accuracy,
             const std::string& out_loss) {
  const std::string text = read_file(log_path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,train_loss,train_accuracy,test_loss,test_accuracy")
    throw ConfigError("log CSV header missing or malformed in " + log_path);
  std::vector<double> epoch, tl, ta, vl, va;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> row;
    try {
      while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw ConfigError("malformed CSV row at line " + std::to_string(lineno));
    }
    if (row.size() != 5)
      throw ConfigError("malformed CSV row at line " + std::to_string(lineno));
    epoch.push_back(row[0]);
    tl.push_back(row[1]);
    ta.push_back(row[2]);
    vl.push_back(row[3]);
    va.push_back(row[4]);
  }
  if (epoch.empty()) throw ConfigError("log CSV has no data rows: " + log_path);
  write_file_atomic(out_accuracy,
                    render_line_chart({{"train accuracy", "#1f77b4", epoch, ta},
                                       {"test accuracy", "#d62728", epoch, va}},
                                      "Accuracy Per Epoch", "epoch", "accuracy"));
  write_file_atomic(out_loss, render_line_chart({{"train loss", "#1f77b4", epoch, tl},
                                                 {"test loss", "#d62728", epoch, vl}},
                                                "Loss Per Epoch", "epoch", "loss"));
  std::cout << "charts written: " << out_accuracy << ", " << out_loss << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depthwise-separable CNN pipeline for 4-class chest X-ray classification"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Config file with key = value lines");

  // prepare
  auto* prepare = app.add_subcommand("prepare", "Build a dataset manifest");
  std::string data_root, out_manifest = "manifest.tsv";
  double test_fraction = 0.25;
  std::vector<int64_t> targets;
  uint64_t seed = 0;
  prepare->add_option("--data-root", data_root, "Directory with one subdirectory per class")
      ->required();
  prepare->add_option("--test-fraction", test_fraction, "Held-out image fraction");
  prepare->add_option("--targets", targets,
                      "Post-augmentation train counts: normal covid19 bacterial viral")
      ->expected(4);
  prepare->add_option("--seed", seed, "Seed for split and augmentation");
  prepare->add_option("--out", out_manifest, "Manifest output path");

  // train
  auto* train = app.add_subcommand("train", "Train a model from a manifest");
  std::string manifest_path, init_weights, out_weights = "model.scw",
                             out_log = "log.csv", freeze = "none";
  ArchFlags train_arch;
  TrainConfig tc;
  train->add_option("--manifest", manifest_path, "Manifest file")->required();
  train->add_option("--data-root", data_root, "Dataset root the manifest paths are relative to")
      ->required();
  train_arch.attach(train);
  train->add_option("--epochs", tc.epochs, "Training epochs");
  train->add_option("--batch-size", tc.batch_size, "Batch size");
  train->add_option("--lr", tc.learning_rate, "ADAM learning rate");
  train->add_option("--seed", tc.seed, "Training seed");
  train->add_option("--init-weights", init_weights, "Optional weight file to start from");
  train->add_option("--freeze", freeze, "Freeze policy: none | feature-extractor");
  train->add_option("--out", out_weights, "Weight file output path");
  train->add_option("--log", out_log, "Epoch CSV output path");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a model on a manifest split");
  std::string weights, split_name = "test", out_prefix = "report", from_matrix;
  ArchFlags eval_arch;
  eval->add_option("--manifest", manifest_path, "Manifest file");
  eval->add_option("--data-root", data_root, "Dataset root");
  eval->add_option("--split", split_name, "Split to evaluate: train | test");
  eval_arch.attach(eval);
  eval->add_option("--weights", weights, "Trained weight file");
  eval->add_option("--out", out_prefix, "Output prefix for report files");
  eval->add_option("--from-matrix", from_matrix,
                   "Recompute metrics from an existing confusion matrix TSV");

  // predict
  auto* predict = app.add_subcommand("predict", "Classify individual images");
  std::vector<std::string> images;
  ArchFlags predict_arch;
  predict_arch.attach(predict);
  predict->add_option("--weights", weights, "Trained weight file")->required();
  predict->add_option("--image", images, "Image path(s)")->required()->expected(-1);

  // plot
  auto* plot = app.add_subcommand("plot", "Render epoch CSV as SVG charts");
  std::string log_path, out_accuracy = "accuracy.svg", out_loss = "loss.svg";
  plot->add_option("--log", log_path, "Epoch CSV from train")->required();
  plot->add_option("--out-accuracy", out_accuracy, "Accuracy chart path");
  plot->add_option("--out-loss", out_loss, "Loss chart path");

  try {
    app.parse(argc, argv);
    if (prepare->parsed())
      return cmd_prepare(data_root, test_fraction, targets, seed, out_manifest);
    if (train->parsed())
      return cmd_train(manifest_path, data_root, train_arch, tc, freeze, init_weights,
                       out_weights, out_log);
    if (eval->parsed())
      return cmd_eval(manifest_path, data_root, split_name, eval_arch, weights, out_prefix,
                      from_matrix);
    if (predict->parsed()) return cmd_predict(predict_arch, weights, images);
    if (plot->parsed()) return cmd_plot(log_path, out_accuracy, out_loss);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  } catch (const sepnet::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const sepnet::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::logic_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return 0;
}
