#include "dvt/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <json.hpp>
#include <numbers>
#include <sstream>

#include "dvt/error.hpp"
#include "dvt/io.hpp"
#include "dvt/rng.hpp"

namespace dvt {

// ---- Dataset -----------------------------------------------------------------

std::vector<std::size_t> Dataset::supervised_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (sup_mask[i]) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::unsupervised_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (!sup_mask[i]) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::labeled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (labels[i] != kNoLabel) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(class_count, 0);
  for (int y : labels) {
    if (y != kNoLabel) ++counts.at(static_cast<std::size_t>(y));
  }
  return counts;
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.domain_id = domain_id;
  out.class_count = class_count;
  out.features = features.take_rows(rows);
  for (std::size_t r : rows) {
    out.labels.push_back(labels.at(r));
    out.sup_mask.push_back(sup_mask.at(r));
  }
  return out;
}

std::vector<int> Dataset::labels_of(const std::vector<std::size_t>& rows) const {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) {
    if (labels.at(r) == kNoLabel) {
      throw DataError("dataset '" + domain_id + "': row " + std::to_string(r) + " has no label");
    }
    out.push_back(labels[r]);
  }
  return out;
}

void Dataset::validate() const {
  if (features.rank() != 2) throw DataError("dataset '" + domain_id + "': features must be (N, D)");
  if (features.dim(0) != labels.size() || sup_mask.size() != labels.size()) {
    throw DataError("dataset '" + domain_id + "': features, labels and mask disagree in length");
  }
  if (!features.all_finite()) throw DataError("dataset '" + domain_id + "': non-finite feature");
  if (class_count == 0) throw DataError("dataset '" + domain_id + "': class count is zero");
  bool any_sup = false;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y != kNoLabel && (y < 0 || static_cast<std::size_t>(y) >= class_count)) {
      throw DataError("dataset '" + domain_id + "': row " + std::to_string(i) + " label " +
                      std::to_string(y) + " out of range");
    }
    if (sup_mask[i]) {
      if (y == kNoLabel) {
        throw DataError("dataset '" + domain_id + "': supervised row " + std::to_string(i) +
                        " has no label");
      }
      any_sup = true;
    }
  }
  (void)any_sup;
}

// ---- moons -------------------------------------------------------------------

Dataset generate_moons(std::size_t n_class0, std::size_t n_class1, double noise_sd,
                       std::uint64_t seed) {
  if (n_class0 == 0 || n_class1 == 0) throw ConfigError("generate_moons: counts must be >= 1");
  if (!(noise_sd >= 0.0)) throw ConfigError("generate_moons: noise_sd must be >= 0");
  Rng rng(seed);
  const std::size_t n = n_class0 + n_class1;
  std::vector<double> raw(2 * n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool upper = i < n_class0;
    const double t = std::numbers::pi * rng.uniform();
    double x = upper ? std::cos(t) : 1.0 - std::cos(t);
    double y = upper ? std::sin(t) : 0.5 - std::sin(t);
    if (noise_sd > 0.0) {
      x += noise_sd * rng.normal();
      y += noise_sd * rng.normal();
    }
    raw[2 * i] = 0.25 * (x - 0.5) + 0.5;
    raw[2 * i + 1] = 0.25 * (y - 0.25) + 0.5;
    labels[i] = upper ? 0 : 1;
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);

  Dataset ds;
  ds.domain_id = "moons";
  ds.class_count = 2;
  ds.features = Tensor(Shape{n, 2}, std::move(raw)).take_rows(order);
  for (std::size_t r : order) ds.labels.push_back(labels[r]);
  ds.sup_mask.assign(n, false);
  return ds;
}

namespace {

constexpr double kShiftAngle = std::numbers::pi / 6.0;

void rotate_about_center(double& x, double& y, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double dx = x - 0.5, dy = y - 0.5;
  x = c * dx - s * dy + 0.5;
  y = s * dx + c * dy + 0.5;
}

void require_points(const char* op, const Tensor& points) {
  if (points.rank() != 2 || points.dim(1) != 2) {
    throw ShapeError(std::string(op) + ": expects (N, 2) points, got " + shape_string(points.shape()));
  }
}

}  // namespace

Tensor shift_target(const Tensor& points) {
  require_points("shift_target", points);
  Tensor out = points;
  for (std::size_t i = 0; i < out.dim(0); ++i) {
    double& x = out.at(i, 0);
    double& y = out.at(i, 1);
    rotate_about_center(x, y, kShiftAngle);
    if (!(x > 0.0) || !(y > 0.0)) {
      std::ostringstream os;
      os << "shift_target: point " << i << " (" << points.at(i, 0) << ", " << points.at(i, 1)
         << ") has a non-positive coordinate after rotation (" << x << ", " << y << ")";
      throw NumericError(os.str());
    }
    x = std::log10(x) + 1.0;
    y = std::log10(y) + 1.0;
  }
  return out;
}

Tensor unshift_target(const Tensor& points) {
  require_points("unshift_target", points);
  Tensor out = points;
  for (std::size_t i = 0; i < out.dim(0); ++i) {
    double& x = out.at(i, 0);
    double& y = out.at(i, 1);
    x = std::pow(10.0, x - 1.0);
    y = std::pow(10.0, y - 1.0);
    rotate_about_center(x, y, -kShiftAngle);
  }
  return out;
}

// ---- splits ------------------------------------------------------------------

namespace {

std::vector<std::vector<std::size_t>> rows_by_class(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(ds.class_count);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] != kNoLabel) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  return by_class;
}

std::size_t rounded(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

}  // namespace

Dataset split_supervised(const Dataset& ds, const SupervisionSpec& spec, std::uint64_t seed,
                         bool stratified) {
  if (spec.fraction.has_value() == spec.count_per_class.has_value()) {
    throw ConfigError("split_supervised: give exactly one of fraction and count_per_class");
  }
  if (spec.fraction && !(*spec.fraction >= 0.0 && *spec.fraction <= 1.0)) {
    throw ConfigError("split_supervised: fraction must lie in [0, 1]");
  }
  Rng rng(seed);
  Dataset out = ds;
  out.sup_mask.assign(ds.size(), false);
  if (stratified || spec.count_per_class) {
    const auto by_class = rows_by_class(ds);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      const auto& rows = by_class[c];
      std::size_t want = spec.count_per_class ? *spec.count_per_class
                                              : std::max<std::size_t>(1, rounded(*spec.fraction, rows.size()));
      if (rows.empty()) {
        if (want == 0 || (spec.fraction && *spec.fraction == 0.0)) continue;
        throw DataError("split_supervised: class " + std::to_string(c) +
                        " has no labelled rows to supervise");
      }
      if (spec.fraction && *spec.fraction == 0.0) want = 0;
      if (want > rows.size()) {
        throw ConfigError("split_supervised: class " + std::to_string(c) + " has " +
                          std::to_string(rows.size()) + " rows, " + std::to_string(want) +
                          " requested");
      }
      for (std::size_t pick : rng.sample_without_replacement(rows.size(), want)) {
        out.sup_mask[rows[pick]] = true;
      }
    }
  } else {
    const std::vector<std::size_t> rows = ds.labeled_indices();
    const std::size_t want = rounded(*spec.fraction, rows.size());
    for (std::size_t pick : rng.sample_without_replacement(rows.size(), want)) {
      out.sup_mask[rows[pick]] = true;
    }
  }
  return out;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double train_fraction,
                                             std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_test_split: fraction must lie in (0, 1)");
  }
  Rng rng(seed);
  std::vector<std::size_t> train, test;
  for (const auto& rows : rows_by_class(ds)) {
    const std::size_t k = rounded(train_fraction, rows.size());
    std::vector<std::size_t> perm = rng.sample_without_replacement(rows.size(), rows.size());
    for (std::size_t i = 0; i < perm.size(); ++i) (i < k ? train : test).push_back(rows[perm[i]]);
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] == kNoLabel) train.push_back(i);
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {ds.subset(train), ds.subset(test)};
}

MoonsExperiment make_moons_experiment(const MoonsOptions& opts) {
  auto stream = [&](std::uint64_t k) { return Rng::derive(opts.seed, k).next_u64(); };
  MoonsExperiment e;
  Dataset source = generate_moons(opts.n_major, opts.n_minor, opts.noise_sd, stream(1));
  source.domain_id = "source";
  auto [s_train, s_test] = train_test_split(source, opts.train_fraction, stream(2));
  e.source.train = split_supervised(s_train, {opts.sup_frac_source, {}}, stream(3), true);
  e.source.test = std::move(s_test);

  Dataset target = generate_moons(opts.n_minor, opts.n_major, opts.noise_sd, stream(4));
  target.domain_id = "target";
  target.features = shift_target(target.features);
  auto [t_train, t_test] = train_test_split(target, opts.train_fraction, stream(5));
  e.target.train = split_supervised(t_train, {opts.sup_frac_target, {}}, stream(6), true);
  e.target.test = std::move(t_test);
  return e;
}

// ---- CSV ---------------------------------------------------------------------

namespace {

// RFC 4180 records: quoted fields may contain commas, quotes ("") and newlines.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false;
  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
    record.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_record();
    } else if (c == '\r') {
      // tolerated before \n
    } else {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw DataError("csv: unterminated quoted field");
  if (field_started || !field.empty() || !record.empty()) end_record();
  return records;
}

double parse_number(const std::string& s, std::size_t row, const std::string& column) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && last[-1] == ' ') --last;
  if (first < last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last || !std::isfinite(v)) {
    throw DataError("csv: row " + std::to_string(row) + ", column '" + column +
                    "': non-numeric feature '" + s + "'");
  }
  return v;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

Dataset load_csv_features(const std::filesystem::path& path, const std::string& label_column,
                          const std::vector<std::string>& class_names,
                          const std::string& supervised_column) {
  if (class_names.empty()) throw ConfigError("load_csv_features: class_names must not be empty");
  const auto records = parse_csv(read_file(path));
  if (records.empty()) throw DataError("csv '" + path.string() + "': missing header row");
  const auto& header = records.front();
  std::optional<std::size_t> label_col, sup_col;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == label_column) {
      label_col = c;
    } else if (!supervised_column.empty() && header[c] == supervised_column) {
      sup_col = c;
    } else {
      feature_cols.push_back(c);
    }
  }
  if (!label_col) throw DataError("csv '" + path.string() + "': no label column '" + label_column + "'");
  if (!supervised_column.empty() && !sup_col) {
    throw DataError("csv '" + path.string() + "': no supervision column '" + supervised_column + "'");
  }
  if (feature_cols.empty()) throw DataError("csv '" + path.string() + "': no feature columns");

  Dataset ds;
  ds.domain_id = path.stem().string();
  ds.class_count = class_names.size();
  const std::size_t n = records.size() - 1;
  std::vector<double> values;
  values.reserve(n * feature_cols.size());
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.size() != header.size()) {
      throw DataError("csv '" + path.string() + "': row " + std::to_string(r) + " has " +
                      std::to_string(rec.size()) + " fields, header has " +
                      std::to_string(header.size()));
    }
    for (std::size_t c : feature_cols) values.push_back(parse_number(rec[c], r, header[c]));
    const std::string& label = rec[*label_col];
    int y = kNoLabel;
    if (!label.empty()) {
      auto it = std::find(class_names.begin(), class_names.end(), label);
      if (it == class_names.end()) {
        throw DataError("csv '" + path.string() + "': row " + std::to_string(r) +
                        " has unknown class label '" + label + "'");
      }
      y = static_cast<int>(it - class_names.begin());
    }
    bool sup = y != kNoLabel;
    if (sup_col) {
      const std::string& flag = rec[*sup_col];
      if (flag != "0" && flag != "1") {
        throw DataError("csv '" + path.string() + "': row " + std::to_string(r) +
                        " has supervision flag '" + flag + "', expected 0 or 1");
      }
      sup = flag == "1";
      if (sup && y == kNoLabel) {
        throw DataError("csv '" + path.string() + "': row " + std::to_string(r) +
                        " is marked supervised but has no label");
      }
    }
    ds.labels.push_back(y);
    ds.sup_mask.push_back(sup);
  }
  ds.features = Tensor(Shape{n, feature_cols.size()}, std::move(values));
  ds.validate();
  return ds;
}

std::string csv_features_string(const Dataset& ds, const std::vector<std::string>& class_names,
                                bool with_supervised) {
  if (class_names.size() != ds.class_count) {
    throw ConfigError("csv: " + std::to_string(class_names.size()) + " class names for " +
                      std::to_string(ds.class_count) + " classes");
  }
  std::string out;
  for (std::size_t c = 0; c < ds.dim(); ++c) out += "x" + std::to_string(c) + ",";
  out += "label";
  if (with_supervised) out += ",supervised";
  out += '\n';
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (std::size_t c = 0; c < ds.dim(); ++c) out += format_double(ds.features.at(r, c)) + ",";
    if (ds.labels[r] != kNoLabel) out += csv_escape(class_names[static_cast<std::size_t>(ds.labels[r])]);
    if (with_supervised) out += ds.sup_mask[r] ? ",1" : ",0";
    out += '\n';
  }
  return out;
}

void write_csv_features(const std::filesystem::path& path, const Dataset& ds,
                        const std::vector<std::string>& class_names, bool with_supervised) {
  write_file_atomic(path, csv_features_string(ds, class_names, with_supervised));
}

// ---- IDX ---------------------------------------------------------------------

namespace {

std::uint32_t read_be32(const std::string& bytes, std::size_t offset, const std::string& what) {
  if (offset + 4 > bytes.size()) throw DataError(what + ": truncated header");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

void put_be32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out += static_cast<char>((v >> shift) & 0xff);
}

}  // namespace

Dataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels,
                        bool normalize, std::size_t class_count) {
  const std::string img = read_file(images);
  const std::string lab = read_file(labels);
  const std::string iname = "idx '" + images.string() + "'";
  const std::string lname = "idx '" + labels.string() + "'";
  if (read_be32(img, 0, iname) != 0x00000803) throw DataError(iname + ": bad magic number");
  if (read_be32(lab, 0, lname) != 0x00000801) throw DataError(lname + ": bad magic number");
  const std::size_t n = read_be32(img, 4, iname);
  const std::size_t rows = read_be32(img, 8, iname);
  const std::size_t cols = read_be32(img, 12, iname);
  const std::size_t nl = read_be32(lab, 4, lname);
  if (n != nl) {
    throw DataError(lname + ": " + std::to_string(nl) + " labels for " + std::to_string(n) + " images");
  }
  const std::size_t d = rows * cols;
  if (img.size() < 16 + n * d) throw DataError(iname + ": truncated pixel data");
  if (lab.size() < 8 + n) throw DataError(lname + ": truncated label data");

  Dataset ds;
  ds.domain_id = images.stem().string();
  ds.class_count = class_count;
  std::vector<double> values(n * d);
  const double scale = normalize ? 1.0 / 255.0 : 1.0;
  for (std::size_t i = 0; i < n * d; ++i) {
    values[i] = static_cast<double>(static_cast<unsigned char>(img[16 + i])) * scale;
  }
  ds.features = Tensor(Shape{n, d}, std::move(values));
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<unsigned char>(lab[8 + i]);
    if (static_cast<std::size_t>(y) >= class_count) {
      throw DataError(lname + ": label " + std::to_string(y) + " at index " + std::to_string(i) +
                      " exceeds class count " + std::to_string(class_count));
    }
    ds.labels.push_back(y);
  }
  ds.sup_mask.assign(n, true);
  return ds;
}

std::string idx_images_bytes(const std::vector<std::uint8_t>& pixels, std::size_t count,
                             std::size_t rows, std::size_t cols) {
  if (pixels.size() != count * rows * cols) throw ShapeError("idx: pixel count mismatch");
  std::string out;
  put_be32(out, 0x00000803);
  put_be32(out, static_cast<std::uint32_t>(count));
  put_be32(out, static_cast<std::uint32_t>(rows));
  put_be32(out, static_cast<std::uint32_t>(cols));
  out.append(pixels.begin(), pixels.end());
  return out;
}

std::string idx_labels_bytes(const std::vector<std::uint8_t>& labels) {
  std::string out;
  put_be32(out, 0x00000801);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.append(labels.begin(), labels.end());
  return out;
}

DomainSplits make_digits_experiment(const std::filesystem::path& train_images,
                                    const std::filesystem::path& train_labels,
                                    const std::filesystem::path& test_images,
                                    const std::filesystem::path& test_labels,
                                    std::size_t per_class, std::uint64_t seed) {
  DomainSplits d;
  d.train = load_idx_images(train_images, train_labels, true);
  d.train.domain_id = "digits";
  SupervisionSpec spec;
  spec.count_per_class = per_class;
  d.train = split_supervised(d.train, spec, seed, true);
  d.test = load_idx_images(test_images, test_labels, true);
  d.test.domain_id = "digits";
  d.test.sup_mask.assign(d.test.size(), false);
  return d;
}

// ---- manifest ----------------------------------------------------------------

const DatasetEntry& DatasetManifest::find(const std::string& domain_id,
                                          const std::string& split) const {
  for (const DatasetEntry& e : datasets) {
    if (e.domain_id == domain_id && e.split == split) return e;
  }
  throw ConfigError("manifest: no '" + split + "' dataset for domain '" + domain_id + "'");
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  using nlohmann::json;
  try {
    const json doc = json::parse(read_file(path));
    DatasetManifest m;
    m.seed = doc.value("seed", std::uint64_t{0});
    m.experiment = doc.value("experiment", std::string{});
    for (const json& e : doc.at("datasets")) {
      DatasetEntry d;
      d.domain_id = e.at("domain_id").get<std::string>();
      d.split = e.value("split", std::string{"train"});
      d.path = e.at("path").get<std::string>();
      d.format = e.at("format").get<std::string>();
      d.label_column = e.value("label_column", std::string{"label"});
      d.supervised_column = e.value("supervised_column", std::string{});
      d.class_names = e.at("class_names").get<std::vector<std::string>>();
      d.labels_path = e.value("labels_path", std::string{});
      d.hash = e.value("hash", std::string{});
      if (d.format != "csv" && d.format != "idx") {
        throw DataError("manifest: unknown dataset format '" + d.format + "'");
      }
      m.datasets.push_back(std::move(d));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest '" + path.string() + "': " + e.what());
  }
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  using nlohmann::json;
  json doc;
  doc["experiment"] = manifest.experiment;
  doc["seed"] = manifest.seed;
  json arr = json::array();
  for (const DatasetEntry& d : manifest.datasets) {
    json e{{"domain_id", d.domain_id}, {"split", d.split},         {"path", d.path},
           {"format", d.format},       {"class_names", d.class_names}, {"label_column", d.label_column}};
    if (!d.supervised_column.empty()) e["supervised_column"] = d.supervised_column;
    if (!d.labels_path.empty()) e["labels_path"] = d.labels_path;
    if (!d.hash.empty()) e["hash"] = d.hash;
    arr.push_back(std::move(e));
  }
  doc["datasets"] = arr;
  return doc.dump(2) + "\n";
}

Dataset load_dataset(const DatasetEntry& entry, const std::filesystem::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  const std::filesystem::path path = resolve(entry.path);
  if (!entry.hash.empty() && file_hash(path) != entry.hash) {
    throw DataError("dataset '" + path.string() + "': content hash does not match manifest");
  }
  Dataset ds;
  if (entry.format == "csv") {
    ds = load_csv_features(path, entry.label_column, entry.class_names, entry.supervised_column);
  } else if (entry.format == "idx") {
    ds = load_idx_images(path, resolve(entry.labels_path), true, entry.class_names.size());
  } else {
    throw DataError("dataset: unknown format '" + entry.format + "'");
  }
  ds.domain_id = entry.domain_id;
  return ds;
}

}  // namespace dvt
