#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dvt/tensor.hpp"

namespace dvt {

inline constexpr int kNoLabel = -1;

struct Dataset {
  std::string domain_id;
  Tensor features{Shape{0, 0}};  // (N, D)
  std::vector<int> labels;       // kNoLabel where unknown
  std::vector<bool> sup_mask;    // true rows may be used as labelled data
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.rank() == 2 ? features.dim(1) : 0; }

  std::vector<std::size_t> supervised_indices() const;
  std::vector<std::size_t> unsupervised_indices() const;
  // Rows whose label is known, supervised or not.
  std::vector<std::size_t> labeled_indices() const;
  // Row counts per class over rows with known labels.
  std::vector<std::size_t> class_counts() const;

  Dataset subset(const std::vector<std::size_t>& rows) const;
  // Labels of `rows`; throws if any is unknown.
  std::vector<int> labels_of(const std::vector<std::size_t>& rows) const;

  // Throws DataError when the invariants do not hold.
  void validate() const;
};

// Two interleaved half circles. Class 0 is the upper arc (cos t, sin t), class
// 1 the lower arc (1 - cos t, 1/2 - sin t), t ~ U[0, pi]. Gaussian noise with
// standard deviation `noise_sd` is added in that frame, then points are mapped
// into the unit square by p -> (p - (1/2, 1/4)) / 4 + (1/2, 1/2). Rows are
// shuffled; all labels are known and no row is marked supervised.
Dataset generate_moons(std::size_t n_class0, std::size_t n_class1, double noise_sd,
                       std::uint64_t seed);

// Rotates by 30 degrees counter-clockwise about (1/2, 1/2), then applies
// log10(x) + 1 to every coordinate. Throws NumericError naming the first
// point with a non-positive coordinate after rotation.
Tensor shift_target(const Tensor& points);
// Inverse of shift_target.
Tensor unshift_target(const Tensor& points);

struct SupervisionSpec {
  // Exactly one of these is set.
  std::optional<double> fraction;
  std::optional<std::size_t> count_per_class;
};

// Marks a random subset of labelled rows as supervised. Stratified mode draws
// round(fraction * n_c) (at least one) rows from each class c; otherwise
// round(fraction * N) rows are drawn uniformly. `count_per_class` implies
// stratified sampling.
Dataset split_supervised(const Dataset& ds, const SupervisionSpec& spec, std::uint64_t seed,
                         bool stratified);

// Class-stratified split: each class contributes round(train_fraction * n_c)
// rows to the first dataset and the rest to the second.
std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double train_fraction,
                                             std::uint64_t seed);

// Source/target moons with reversed class balance. The source has n_major
// rows of class 0 and n_minor of class 1; the target swaps the counts and is
// passed through shift_target. Each domain is split into train/test halves
// (stratified) and the train half gets stratified supervision.
struct MoonsOptions {
  std::size_t n_major = 10000;
  std::size_t n_minor = 400;
  double noise_sd = 0.05;
  double train_fraction = 0.5;
  double sup_frac_source = 0.1;
  double sup_frac_target = 0.025;
  std::uint64_t seed = 0;
};

struct DomainSplits {
  Dataset train;
  Dataset test;
};

struct MoonsExperiment {
  DomainSplits source;  // domain id "source"
  DomainSplits target;  // domain id "target"
};

MoonsExperiment make_moons_experiment(const MoonsOptions& opts);

inline const std::vector<std::string>& moons_class_names() {
  static const std::vector<std::string> names{"red", "blue"};
  return names;
}

// ---- CSV -------------------------------------------------------------------

// Reads a header-first CSV. Every column other than the label (and optional
// supervision flag) column is a numeric feature. Labels map to their index in
// `class_names`; an empty label marks the row unsupervised. Without a
// supervision column, rows are supervised exactly when they carry a label.
Dataset load_csv_features(const std::filesystem::path& path, const std::string& label_column,
                          const std::vector<std::string>& class_names,
                          const std::string& supervised_column = "");

// Writes features as x0..x{D-1}, then `label` (class name, empty if
// unknown) and, when `with_supervised` is set, a 0/1 `supervised` column.
std::string csv_features_string(const Dataset& ds, const std::vector<std::string>& class_names,
                                bool with_supervised);
void write_csv_features(const std::filesystem::path& path, const Dataset& ds,
                        const std::vector<std::string>& class_names, bool with_supervised);

// ---- IDX -------------------------------------------------------------------

// Reads big-endian IDX image (magic 0x00000803) and label (0x00000801) files.
// Images are flattened to rows of H*W features, scaled to [0, 1] when
// `normalize` is set. All rows are labelled and supervised.
Dataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels,
                        bool normalize, std::size_t class_count = 10);

std::string idx_images_bytes(const std::vector<std::uint8_t>& pixels, std::size_t count,
                             std::size_t rows, std::size_t cols);
std::string idx_labels_bytes(const std::vector<std::uint8_t>& labels);

// Labelled IDX train/test files as domain "digits", with `per_class`
// stratified supervised rows in the train split.
DomainSplits make_digits_experiment(const std::filesystem::path& train_images,
                                    const std::filesystem::path& train_labels,
                                    const std::filesystem::path& test_images,
                                    const std::filesystem::path& test_labels,
                                    std::size_t per_class, std::uint64_t seed);

// ---- manifest ----------------------------------------------------------------

struct DatasetEntry {
  std::string domain_id;
  std::string split;  // "train" or "test"
  std::string path;   // relative to the manifest directory unless absolute
  std::string format;  // "csv" or "idx"
  std::string label_column;
  std::string supervised_column;
  std::vector<std::string> class_names;
  std::string labels_path;  // idx only
  std::string hash;         // content hash of `path`, optional
};

struct DatasetManifest {
  std::vector<DatasetEntry> datasets;
  std::uint64_t seed = 0;
  std::string experiment;

  const DatasetEntry& find(const std::string& domain_id, const std::string& split) const;
};

DatasetManifest load_manifest(const std::filesystem::path& path);
std::string manifest_to_json(const DatasetManifest& manifest);
Dataset load_dataset(const DatasetEntry& entry, const std::filesystem::path& base_dir);

}  // namespace dvt
