#pragma once

#include <array>
#include <filesystem>
#include <functional>

#include "sepnet/image.hpp"
#include "sepnet/trainer.hpp"
#include "sepnet/weights.hpp"

namespace sepnet {

inline const std::vector<std::string> kClassNames = {
    "normal", "covid19", "bacterial_pneumonia", "viral_pneumonia"};
inline constexpr int kNumClasses = 4;

inline int class_index(const std::string& name) {
  for (int i = 0; i < kNumClasses; ++i)
    if (kClassNames[static_cast<size_t>(i)] == name) return i;
  throw ConfigError("unknown class label: " + name);
}

enum class Split { Train, Test };
enum class Provenance { Original, Augmented };

struct TransformSpec {
  enum class Kind { Identity, HFlip, Rotate, Distort };
  Kind kind = Kind::Identity;
  double param = 0;  // degrees for rotate, width fraction for distort
  uint64_t seed = 0;

  std::string text() const {
    std::ostringstream out;
    out.precision(17);
    switch (kind) {
      case Kind::Identity: return "identity";
      case Kind::HFlip: return "hflip";
      case Kind::Rotate: out << "rotate:" << param; return out.str();
      case Kind::Distort: out << "distort:" << param; return out.str();
    }
    return "identity";
  }

  static TransformSpec parse(const std::string& text, uint64_t seed) {
    TransformSpec s;
    s.seed = seed;
    if (text == "identity") return s;
    if (text == "hflip") {
      s.kind = Kind::HFlip;
      return s;
    }
    const auto colon = text.find(':');
    const std::string head = text.substr(0, colon);
    if (colon == std::string::npos)
      throw CorruptFileError("malformed transform spec: " + text);
    s.param = std::stod(text.substr(colon + 1));
    if (head == "rotate") s.kind = Kind::Rotate;
    else if (head == "distort") s.kind = Kind::Distort;
    else throw CorruptFileError("unknown transform kind: " + head);
    return s;
  }
};

inline ImageBuffer apply_transform(const ImageBuffer& img, const TransformSpec& spec) {
  switch (spec.kind) {
    case TransformSpec::Kind::Identity: return img;
    case TransformSpec::Kind::HFlip: return hflip(img);
    case TransformSpec::Kind::Rotate: return rotate_deg(img, spec.param);
    case TransformSpec::Kind::Distort:
      return distort(img, spec.param * static_cast<double>(img.width), spec.seed);
  }
  return img;
}

struct SampleRecord {
  std::string path;  // relative to the dataset root
  int label = 0;
  std::string patient_id;
  Split split = Split::Train;
  Provenance provenance = Provenance::Original;
  TransformSpec transform;  // meaningful only for augmented records
};

struct ClassCounts {
  // [label][split][provenance]
  std::array<std::array<std::array<int64_t, 2>, 2>, kNumClasses> n{};
};

struct DatasetManifest {
  std::vector<SampleRecord> records;

  ClassCounts class_counts() const {
    ClassCounts c;
    for (const auto& r : records)
      ++c.n[static_cast<size_t>(r.label)][r.split == Split::Test ? 1 : 0]
           [r.provenance == Provenance::Augmented ? 1 : 0];
    return c;
  }

  // No patient may straddle the train/test boundary.
  void check_patient_exclusivity() const {
    std::map<std::string, Split> seen;
    for (const auto& r : records) {
      auto [it, inserted] = seen.emplace(r.patient_id, r.split);
      if (!inserted && it->second != r.split)
        throw StateError("patient " + r.patient_id + " appears in both splits");
    }
  }
};

// Extracts a patient id from a filename; default is the stem prefix before
// the first underscore. A sidecar table (root/patients.tsv: filename TAB id)
// overrides the rule when present.
struct PatientIdRule {
  std::map<std::string, std::string> sidecar;
  std::string operator()(const std::string& filename) const {
    auto it = sidecar.find(filename);
    if (it != sidecar.end()) return it->second;
    std::string stem = filename;
    const auto dot = stem.rfind('.');
    if (dot != std::string::npos) stem = stem.substr(0, dot);
    const auto us = stem.find('_');
    return us == std::string::npos ? stem : stem.substr(0, us);
  }
};

inline PatientIdRule load_patient_rule(const std::string& root) {
  PatientIdRule rule;
  const auto sidecar_path = std::filesystem::path(root) / "patients.tsv";
  if (std::filesystem::exists(sidecar_path)) {
    std::ifstream in(sidecar_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw CorruptFileError("malformed patients.tsv line: " + line);
      rule.sidecar[line.substr(0, tab)] = line.substr(tab + 1);
    }
  }
  return rule;
}

// Scans root/<class>/ for images, one original record per readable file.
// Directories that are not class names are an error; unreadable files are
// skipped with a warning.
inline DatasetManifest build_manifest(const std::string& root,
                                      std::vector<std::string>* warnings = nullptr) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("data root is not a directory: " + root);
  const PatientIdRule rule = load_patient_rule(root);
  DatasetManifest m;
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (!e.is_directory()) continue;
    dirs.push_back(e.path().filename().string());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    bool known = false;
    for (const auto& c : kClassNames) known = known || c == d;
    if (!known) throw ConfigError("unknown class directory under " + root + ": " + d);
  }
  for (int label = 0; label < kNumClasses; ++label) {
    const fs::path cdir = fs::path(root) / kClassNames[static_cast<size_t>(label)];
    if (!fs::is_directory(cdir)) continue;
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(cdir))
      if (e.is_regular_file()) files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const fs::path full = cdir / f;
      std::ifstream probe(full, std::ios::binary);
      char head[2] = {0, 0};
      probe.read(head, 2);
      const bool looks_image = (head[0] == 'P' && head[1] == '5') ||
                               (static_cast<uint8_t>(head[0]) == 0x89 && head[1] == 'P');
      if (!probe || !looks_image) {
        if (warnings)
          warnings->push_back("skipping unreadable or non-image file: " + full.string());
        continue;
      }
      SampleRecord r;
      r.path = kClassNames[static_cast<size_t>(label)] + "/" + f;
      r.label = label;
      r.patient_id = rule(f);
      m.records.push_back(std::move(r));
    }
  }
  return m;
}

// Patients (not images) are partitioned per class; every image of a patient
// shares its split. The test image count tracks test_fraction as closely as
// patient granularity allows.
inline void patient_split(DatasetManifest& m, double test_fraction, uint64_t seed,
                          std::vector<std::string>* warnings = nullptr) {
  if (test_fraction <= 0 || test_fraction >= 1)
    throw ConfigError("test_fraction must be in (0,1), got " + std::to_string(test_fraction));
  // Patients can span classes in principle; partition by patient id globally
  // within each class pass but keep one split decision per patient.
  std::map<std::string, Split> assigned;
  for (int label = 0; label < kNumClasses; ++label) {
    std::map<std::string, int64_t> patient_images;
    int64_t total = 0;
    for (const auto& r : m.records)
      if (r.label == label) {
        ++patient_images[r.patient_id];
        ++total;
      }
    if (patient_images.empty()) continue;
    if (patient_images.size() == 1 && warnings)
      warnings->push_back("class " + kClassNames[static_cast<size_t>(label)] +
                          " has a single patient; cannot populate both splits");
    std::vector<std::string> patients;
    for (const auto& [p, n] : patient_images) patients.push_back(p);
    Rng rng = Rng::fork(seed, 0x5917ULL + static_cast<uint64_t>(label));
    rng.shuffle(patients.begin(), patients.end());
    const int64_t target = static_cast<int64_t>(std::llround(
        test_fraction * static_cast<double>(total)));
    int64_t test_count = 0;
    for (const auto& p : patients) {
      if (assigned.count(p)) continue;  // already decided via another class
      const int64_t sz = patient_images[p];
      // take the patient if it brings the test count closer to target
      const int64_t without = std::abs(test_count - target);
      const int64_t with = std::abs(test_count + sz - target);
      if (test_count < target && with <= without) {
        assigned[p] = Split::Test;
        test_count += sz;
      } else {
        assigned[p] = Split::Train;
      }
    }
  }
  for (auto& r : m.records) {
    auto it = assigned.find(r.patient_id);
    r.split = it == assigned.end() ? Split::Train : it->second;
  }
  m.check_patient_exclusivity();
}

struct AugmentBounds {
  double max_rotate_deg = 15.0;
  double max_distort_frac = 0.05;  // of image width
};

// Oversamples each class's train originals up to the requested target with
// seeded transforms. Sources rotate round-robin so every original is reused
// floor(deficit/n) or ceil(deficit/n) times. The test split is untouched.
inline void augment_plan(DatasetManifest& m, const std::array<int64_t, kNumClasses>& targets,
                         uint64_t seed, const AugmentBounds& bounds = {}) {
  for (int label = 0; label < kNumClasses; ++label) {
    std::vector<size_t> originals;
    for (size_t i = 0; i < m.records.size(); ++i) {
      const auto& r = m.records[i];
      if (r.label == label && r.split == Split::Train && r.provenance == Provenance::Original)
        originals.push_back(i);
    }
    const int64_t have = static_cast<int64_t>(originals.size());
    const int64_t target = targets[static_cast<size_t>(label)];
    if (target < have)
      throw ConfigError("augmentation target " + std::to_string(target) + " for class " +
                        kClassNames[static_cast<size_t>(label)] + " is below the " +
                        std::to_string(have) + " train originals (no subsampling)");
    if (have == 0) {
      if (target > 0)
        throw ConfigError("class " + kClassNames[static_cast<size_t>(label)] +
                          " has no train originals to augment from");
      continue;
    }
    Rng rng = Rng::fork(seed, 0xa06ULL + static_cast<uint64_t>(label));
    const int64_t deficit = target - have;
    for (int64_t i = 0; i < deficit; ++i) {
      const SampleRecord& src = m.records[originals[static_cast<size_t>(i % have)]];
      SampleRecord r = src;
      r.provenance = Provenance::Augmented;
      TransformSpec spec;
      switch (rng.below(3)) {
        case 0: spec.kind = TransformSpec::Kind::HFlip; break;
        case 1:
          spec.kind = TransformSpec::Kind::Rotate;
          spec.param = rng.uniform(-bounds.max_rotate_deg, bounds.max_rotate_deg);
          break;
        default:
          spec.kind = TransformSpec::Kind::Distort;
          spec.param = bounds.max_distort_frac * (1.0 - rng.uniform());  // (0, A]
          break;
      }
      spec.seed = rng.next_u64();
      r.transform = spec;
      m.records.push_back(std::move(r));
    }
  }
}

// ---- manifest file: one-line header + one TSV record per line ----

inline const std::string kManifestHeader =
    "path\tlabel\tpatient_id\tsplit\tprovenance\ttransform\ttransform_seed";

inline std::string manifest_to_text(const DatasetManifest& m) {
  std::ostringstream out;
  out << kManifestHeader << '\n';
  for (const auto& r : m.records) {
    out << r.path << '\t' << kClassNames[static_cast<size_t>(r.label)] << '\t'
        << r.patient_id << '\t' << (r.split == Split::Test ? "test" : "train") << '\t'
        << (r.provenance == Provenance::Augmented ? "augmented" : "original") << '\t';
    if (r.provenance == Provenance::Augmented)
      out << r.transform.text() << '\t' << r.transform.seed;
    else
      out << "-\t0";
    out << '\n';
  }
  return out.str();
}

inline DatasetManifest manifest_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw CorruptFileError("manifest header missing or malformed");
  DatasetManifest m;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, '\t')) f.push_back(cell);
    if (f.size() != 7)
      throw CorruptFileError("manifest line " + std::to_string(lineno) + " has " +
                             std::to_string(f.size()) + " fields, expected 7");
    SampleRecord r;
    r.path = f[0];
    r.label = class_index(f[1]);
    r.patient_id = f[2];
    if (f[3] == "train") r.split = Split::Train;
    else if (f[3] == "test") r.split = Split::Test;
    else throw CorruptFileError("bad split on manifest line " + std::to_string(lineno));
    if (f[4] == "original") r.provenance = Provenance::Original;
    else if (f[4] == "augmented") r.provenance = Provenance::Augmented;
    else throw CorruptFileError("bad provenance on manifest line " + std::to_string(lineno));
    if (r.provenance == Provenance::Augmented)
      r.transform = TransformSpec::parse(f[5], std::stoull(f[6]));
    m.records.push_back(std::move(r));
  }
  return m;
}

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
  write_file_atomic(path, manifest_to_text(m));
}

inline DatasetManifest read_manifest(const std::string& path) {
  return manifest_from_text(read_file(path));
}

// ---- decoding ----

inline Tensor<float> decode_record(const std::string& root, const SampleRecord& r,
                                   int64_t height, int64_t width) {
  ImageBuffer img = read_image((std::filesystem::path(root) / r.path).string());
  if (r.provenance == Provenance::Augmented) img = apply_transform(img, r.transform);
  img = resize_bilinear(img, height, width);
  return image_to_tensor<float>(img);
}

inline Dataset<float> load_dataset(const DatasetManifest& m, const std::string& root,
                                   Split split, int64_t height, int64_t width) {
  Dataset<float> ds;
  for (const auto& r : m.records) {
    if (r.split != split) continue;
    ds.images.push_back(decode_record(root, r, height, width));
    ds.labels.push_back(r.label);
  }
  return ds;
}

// Seeded per-epoch batch sequence over one split, decoding from disk.
inline std::vector<Batch<float>> batch_iter(const DatasetManifest& m, const std::string& root,
                                            Split split, int64_t batch_size, int64_t height,
                                            int64_t width, uint64_t seed,
                                            int64_t epoch_index, bool shuffle = true) {
  Dataset<float> ds = load_dataset(m, root, split, height, width);
  return make_batches(ds, batch_size, seed, epoch_index, shuffle);
}

}  // namespace sepnet
