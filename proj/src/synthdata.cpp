#include "h2e/synthdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "h2e/error.hpp"

namespace h2e::data {

namespace {

// floor(rate * n) with a tolerance so that e.g. 0.29 * 100 yields 29.
int noise_quota(double rate, int n) {
  return static_cast<int>(std::floor(rate * n + 1e-9));
}

nn::Vector random_unit(int d, Rng& rng) {
  nn::Vector v(d);
  for (int i = 0; i < d; ++i) v(i) = rng.normal();
  return v / v.norm();
}

// Removes from v its components along the (orthonormal) rows of basis.
void project_out(nn::Vector& v, const nn::Matrix& basis) {
  for (int pass = 0; pass < 2; ++pass)
    for (Eigen::Index r = 0; r < basis.rows(); ++r) v -= basis.row(r).dot(v) * basis.row(r).transpose();
}

nn::Matrix orthonormal_basis(const nn::Matrix& rows) {
  nn::Matrix basis(0, rows.cols());
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    nn::Vector v = rows.row(r).transpose();
    project_out(v, basis);
    const double n = v.norm();
    if (n < 1e-12) continue;
    basis.conservativeResize(basis.rows() + 1, Eigen::NoChange);
    basis.row(basis.rows() - 1) = (v / n).transpose();
  }
  return basis;
}

std::vector<std::size_t> pick_without_replacement(std::vector<std::size_t> pool, int k, Rng& rng) {
  k = std::min<int>(k, static_cast<int>(pool.size()));
  for (int i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

void check_rate(double rho, const char* what) {
  if (!(rho >= 0.0) || !(rho < 1.0))
    throw DomainError(std::string(what) + ": noise rate must lie in [0, 1)");
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::string join_ints(std::span<const int> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> parse_ints(const std::string& s, const std::string& key) {
  std::vector<int> out;
  if (s.empty()) return out;
  for (const auto& tok : split(s, ',')) {
    int v = 0;
    if (!parse_number(trim(tok), v)) throw ParseError("meta: bad integer list for '" + key + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace

const char* to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::kNone: return "none";
    case NoiseKind::kBlue: return "blue";
    case NoiseKind::kRed: return "red";
  }
  return "none";
}

NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "none") return NoiseKind::kNone;
  if (s == "blue") return NoiseKind::kBlue;
  if (s == "red") return NoiseKind::kRed;
  throw ParseError("unknown noise_kind '" + s + "'");
}

void GenerativeSpec::validate() const {
  if (class_count < 1 || context_count < 1 || feature_dim < 1)
    throw ConfigError("generative spec: dimensions must be positive");
  if (class_directions.rows() != class_count || class_directions.cols() != feature_dim)
    throw ConfigError("generative spec: class_directions must be C x d");
  if (context_directions.rows() != context_count || context_directions.cols() != feature_dim)
    throw ConfigError("generative spec: context_directions must be K x d");
  if (context_affinity.rows() != class_count || context_affinity.cols() != context_count)
    throw ConfigError("generative spec: context_affinity must be C x K");
  for (int c = 0; c < class_count; ++c)
    if (std::abs(class_directions.row(c).norm() - 1.0) > 1e-9)
      throw ConfigError("generative spec: class direction " + std::to_string(c) + " is not unit norm");
  for (int k = 0; k < context_count; ++k)
    if (std::abs(context_directions.row(k).norm() - 1.0) > 1e-9)
      throw ConfigError("generative spec: context direction " + std::to_string(k) + " is not unit norm");
  for (int c = 0; c < class_count; ++c) {
    if ((context_affinity.row(c).array() < 0.0).any() ||
        std::abs(context_affinity.row(c).sum() - 1.0) > 1e-9)
      throw ConfigError("generative spec: affinity row " + std::to_string(c) + " is not a distribution");
  }
  if (!(signal_scale >= 0.0) || !(context_scale >= 0.0) || !(noise_scale >= 0.0))
    throw ConfigError("generative spec: scales must be non-negative");
  for (double e : {head_context_entropy, tail_context_entropy})
    if (!(e >= 0.0 && e <= 1.0)) throw ConfigError("generative spec: context entropy knobs must lie in [0, 1]");
}

int GenerativeSpec::modal_context(int c) const {
  Eigen::Index k = 0;
  context_affinity.row(c).maxCoeff(&k);
  return static_cast<int>(k);
}

GenerativeSpec make_generative_spec(const GeneratorParams& p, Rng& rng) {
  if (p.class_count < 1 || p.context_count < 1 || p.feature_dim < 1)
    throw ConfigError("generator: class_count, context_count and feature_dim must be positive");
  GenerativeSpec spec;
  spec.class_count = p.class_count;
  spec.context_count = p.context_count;
  spec.feature_dim = p.feature_dim;
  spec.signal_scale = p.signal_scale;
  spec.context_scale = p.context_scale;
  spec.noise_scale = p.noise_scale;
  spec.head_context_entropy = p.head_context_entropy;
  spec.tail_context_entropy = p.tail_context_entropy;

  const int d = p.feature_dim;
  nn::Matrix raw(p.class_count, d);
  for (int c = 0; c < p.class_count; ++c) raw.row(c) = random_unit(d, rng).transpose();
  if (d >= p.class_count) {
    nn::Matrix basis = orthonormal_basis(raw);
    if (basis.rows() == p.class_count) raw = basis;
  }
  spec.class_directions = raw;

  const nn::Matrix class_basis = orthonormal_basis(spec.class_directions);
  const bool separate = d >= p.class_count + p.context_count;
  spec.context_directions.resize(p.context_count, d);
  nn::Matrix used = class_basis;
  for (int k = 0; k < p.context_count; ++k) {
    nn::Vector v = random_unit(d, rng);
    if (separate) {
      project_out(v, used);
      v /= v.norm();
      used.conservativeResize(used.rows() + 1, Eigen::NoChange);
      used.row(used.rows() - 1) = v.transpose();
    }
    spec.context_directions.row(k) = v.transpose();
  }

  spec.context_affinity.resize(p.class_count, p.context_count);
  const double uniform = 1.0 / p.context_count;
  for (int c = 0; c < p.class_count; ++c) {
    const double t = p.class_count > 1 ? static_cast<double>(c) / (p.class_count - 1) : 0.0;
    const double e = p.head_context_entropy + t * (p.tail_context_entropy - p.head_context_entropy);
    spec.context_affinity.row(c).setConstant(e * uniform);
    spec.context_affinity(c, c % p.context_count) += 1.0 - e;
  }
  spec.validate();
  return spec;
}

int DatasetBundle::feature_dim() const {
  if (!train.empty()) return static_cast<int>(train.front().features.size());
  if (!test.empty()) return static_cast<int>(test.front().features.size());
  return meta.feature_dim;
}

std::size_t DatasetBundle::noise_count() const {
  return static_cast<std::size_t>(
      std::count_if(train.begin(), train.end(), [](const SampleRecord& r) { return r.is_noise; }));
}

void DatasetBundle::refresh_counts() {
  const int C = class_count() > 0 ? class_count() : meta.class_count;
  class_counts.assign(C, 0);
  for (const auto& r : train) {
    if (r.observed_label < 0 || r.observed_label >= C)
      throw DomainError("bundle: observed label " + std::to_string(r.observed_label) + " out of range");
    ++class_counts[r.observed_label];
  }
  const double total = std::accumulate(class_counts.begin(), class_counts.end(), 0.0);
  prior.assign(C, 0.0);
  if (total > 0)
    for (int c = 0; c < C; ++c) prior[c] = class_counts[c] / total;
}

std::vector<int> longtail_counts(int class_count, int n_max, double eta) {
  if (!(eta >= 1.0)) throw DomainError("longtail_counts: imbalance ratio must be >= 1");
  if (class_count < 1) throw ConfigError("longtail_counts: class_count must be positive");
  if (n_max < 1) throw ConfigError("longtail_counts: n_max must be positive");
  if (class_count < 2 && eta > 1.0)
    throw ConfigError("longtail_counts: an imbalance ratio needs at least two classes");
  std::vector<int> counts(class_count);
  for (int c = 0; c < class_count; ++c) {
    const double expo = class_count > 1 ? static_cast<double>(c) / (class_count - 1) : 0.0;
    counts[c] = static_cast<int>(std::lround(n_max * std::pow(eta, -expo)));
  }
  if (counts.back() < 1)
    throw ConfigError("longtail_counts: smallest class would be empty (n_max / eta < 1)");
  return counts;
}

std::vector<SampleRecord> sample_clean(const GenerativeSpec& spec, std::span<const int> counts,
                                       Rng& rng, int first_id) {
  if (static_cast<int>(counts.size()) != spec.class_count)
    throw ShapeError("sample_clean: counts length does not match class_count");
  std::vector<SampleRecord> out;
  int id = first_id;
  const int d = spec.feature_dim;
  for (int c = 0; c < spec.class_count; ++c) {
    std::vector<double> row(spec.context_affinity.row(c).data(),
                            spec.context_affinity.row(c).data() + spec.context_count);
    for (int n = 0; n < counts[c]; ++n) {
      SampleRecord r;
      r.context_id = static_cast<int>(rng.categorical(row));
      r.features.resize(d);
      for (int j = 0; j < d; ++j) {
        r.features[j] = spec.signal_scale * spec.class_directions(c, j) +
                        spec.context_scale * spec.context_directions(r.context_id, j);
        if (spec.noise_scale != 0.0) r.features[j] += spec.noise_scale * rng.normal();
      }
      r.observed_label = c;
      r.clean_label = c;
      r.sample_id = id++;
      out.push_back(std::move(r));
    }
  }
  return out;
}

void inject_blue_noise(std::vector<SampleRecord>& records, int class_count, double rho, Rng& rng) {
  check_rate(rho, "inject_blue_noise");
  if (rho == 0.0) return;
  for (int c = 0; c < class_count; ++c) {
    int n_c = 0;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].clean_label != c) continue;
      ++n_c;
      if (!records[i].is_noise) pool.push_back(i);
    }
    const int quota = noise_quota(rho, n_c);
    if (quota == 0) continue;
    if (class_count < 2) throw DomainError("inject_blue_noise: label flipping needs at least two classes");
    for (std::size_t i : pick_without_replacement(std::move(pool), quota, rng)) {
      SampleRecord& r = records[i];
      int y = static_cast<int>(rng.uniform_index(class_count - 1));
      if (y >= c) ++y;
      r.observed_label = y;
      r.is_noise = true;
      r.noise_kind = NoiseKind::kBlue;
    }
  }
}

void inject_red_noise(const GenerativeSpec& spec, std::vector<SampleRecord>& records, double rho,
                      Rng& rng) {
  check_rate(rho, "inject_red_noise");
  if (rho == 0.0) return;
  if (spec.feature_dim <= spec.class_count)
    throw ConfigError("inject_red_noise: feature_dim must exceed class_count to build open-set directions");
  const nn::Matrix class_basis = orthonormal_basis(spec.class_directions);
  const int d = spec.feature_dim;
  for (int c = 0; c < spec.class_count; ++c) {
    int n_c = 0;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].clean_label != c) continue;
      ++n_c;
      if (!records[i].is_noise && records[i].observed_label == c) pool.push_back(i);
    }
    const int quota = noise_quota(rho, n_c);
    if (quota == 0) continue;
    nn::Vector u = random_unit(d, rng);
    project_out(u, class_basis);
    u /= u.norm();
    const int k = spec.modal_context(c);
    for (std::size_t i : pick_without_replacement(std::move(pool), quota, rng)) {
      SampleRecord& r = records[i];
      for (int j = 0; j < d; ++j) {
        r.features[j] = spec.signal_scale * u(j) + spec.context_scale * spec.context_directions(k, j);
        if (spec.noise_scale != 0.0) r.features[j] += spec.noise_scale * rng.normal();
      }
      r.context_id = k;
      r.clean_label = kOpenSetLabel;
      r.is_noise = true;
      r.noise_kind = NoiseKind::kRed;
    }
  }
}

DatasetBundle build_bundle(const GenerativeSpec& spec, const BundleParams& p, std::uint64_t seed) {
  spec.validate();
  check_rate(p.rho, "build_bundle");
  if (!(p.blue_fraction >= 0.0 && p.blue_fraction <= 1.0))
    throw DomainError("build_bundle: blue_fraction must lie in [0, 1]");
  if (p.test_per_class < 1) throw ConfigError("build_bundle: test_per_class must be positive");

  DatasetBundle b;
  const std::vector<int> counts = longtail_counts(spec.class_count, p.n_max, p.eta);
  Rng train_rng = Rng::stream(seed, "data.train");
  Rng blue_rng = Rng::stream(seed, "data.blue");
  Rng red_rng = Rng::stream(seed, "data.red");
  Rng test_rng = Rng::stream(seed, "data.test");

  b.train = sample_clean(spec, counts, train_rng);
  inject_blue_noise(b.train, spec.class_count, p.blue_fraction * p.rho, blue_rng);
  inject_red_noise(spec, b.train, (1.0 - p.blue_fraction) * p.rho, red_rng);
  const std::vector<int> test_counts(spec.class_count, p.test_per_class);
  b.test = sample_clean(spec, test_counts, test_rng);

  b.meta.class_count = spec.class_count;
  b.meta.feature_dim = spec.feature_dim;
  b.meta.context_count = spec.context_count;
  b.meta.n_max = p.n_max;
  b.meta.eta = p.eta;
  b.meta.rho = p.rho;
  b.meta.blue_fraction = p.blue_fraction;
  b.meta.test_per_class = p.test_per_class;
  b.meta.seed = seed;
  b.meta.clean_counts = counts;
  b.class_counts.assign(spec.class_count, 0);
  b.refresh_counts();
  return b;
}

void write_csv(std::span<const SampleRecord> records, int class_count, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  const std::size_t d = records.empty() ? 0 : records.front().features.size();
  out << "# class_count=" << class_count << '\n';
  out << "sample_id,observed_label,clean_label,is_noise,noise_kind,context_id";
  for (std::size_t j = 0; j < d; ++j) out << ",f" << j;
  out << '\n' << std::setprecision(17);
  for (const auto& r : records) {
    if (r.features.size() != d) throw ShapeError("write_csv: ragged feature vectors");
    out << r.sample_id << ',' << r.observed_label << ',' << r.clean_label << ',' << (r.is_noise ? 1 : 0)
        << ',' << to_string(r.noise_kind) << ',' << r.context_id;
    for (double v : r.features) out << ',' << v;
    out << '\n';
  }
}

CsvData read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  auto fail = [&](std::size_t line, const std::string& msg) -> ParseError {
    return ParseError(path + ":" + std::to_string(line) + ": " + msg);
  };

  std::string line;
  std::size_t lineno = 0;
  int declared_classes = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("class_count=");
      if (pos != std::string::npos && !parse_number(trim(line.substr(pos + 12)), declared_classes))
        throw fail(lineno, "bad class_count declaration");
      continue;
    }
    header = split(line, ',');
    break;
  }
  if (header.empty()) throw fail(lineno, "missing header");

  enum Col { kId, kObserved, kClean, kIsNoise, kKind, kContext };
  const std::map<std::string, Col> known{{"sample_id", kId},      {"observed_label", kObserved},
                                         {"label", kObserved},    {"clean_label", kClean},
                                         {"is_noise", kIsNoise},  {"noise_kind", kKind},
                                         {"context_id", kContext}};
  std::map<Col, std::size_t> where;
  std::vector<std::size_t> feature_cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string name = trim(header[i]);
    if (name.empty()) throw fail(lineno, "empty column name at position " + std::to_string(i));
    auto it = known.find(name);
    if (it == known.end()) {
      feature_cols.push_back(i);
    } else if (!where.emplace(it->second, i).second) {
      throw fail(lineno, "duplicate column '" + name + "'");
    }
  }
  if (!where.count(kObserved)) throw fail(lineno, "header has no label column");
  if (feature_cols.empty()) throw fail(lineno, "header has no feature columns");

  CsvData data;
  data.feature_dim = static_cast<int>(feature_cols.size());
  int max_label = -1;
  int row = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split(line, ',');
    if (cells.size() != header.size())
      throw fail(lineno, "row has " + std::to_string(cells.size()) + " fields, header has " +
                             std::to_string(header.size()));
    auto get_int = [&](Col c, int fallback) {
      auto it = where.find(c);
      if (it == where.end()) return fallback;
      int v = 0;
      if (!parse_number(trim(cells[it->second]), v))
        throw fail(lineno, "column '" + trim(header[it->second]) + "' is not an integer");
      return v;
    };
    SampleRecord r;
    r.sample_id = get_int(kId, row);
    r.observed_label = get_int(kObserved, 0);
    r.clean_label = get_int(kClean, r.observed_label);
    r.context_id = get_int(kContext, 0);
    if (auto it = where.find(kIsNoise); it != where.end()) {
      const std::string v = trim(cells[it->second]);
      if (v == "1" || v == "true") r.is_noise = true;
      else if (v == "0" || v == "false") r.is_noise = false;
      else throw fail(lineno, "is_noise must be 0/1");
    }
    if (auto it = where.find(kKind); it != where.end()) {
      try {
        r.noise_kind = noise_kind_from_string(trim(cells[it->second]));
      } catch (const ParseError& e) {
        throw fail(lineno, e.what());
      }
    } else if (r.is_noise) {
      r.noise_kind = r.clean_label == kOpenSetLabel ? NoiseKind::kRed : NoiseKind::kBlue;
    }
    if (r.is_noise != (r.noise_kind != NoiseKind::kNone))
      throw fail(lineno, "is_noise disagrees with noise_kind");
    if (r.observed_label < 0) throw fail(lineno, "negative label");
    if (declared_classes > 0 && r.observed_label >= declared_classes)
      throw fail(lineno, "label " + std::to_string(r.observed_label) + " outside declared class_count " +
                             std::to_string(declared_classes));
    if (declared_classes > 0 && r.clean_label >= declared_classes)
      throw fail(lineno, "clean label " + std::to_string(r.clean_label) + " outside declared class_count " +
                             std::to_string(declared_classes));
    r.features.resize(feature_cols.size());
    for (std::size_t j = 0; j < feature_cols.size(); ++j) {
      const std::string cell = trim(cells[feature_cols[j]]);
      if (!parse_number(cell, r.features[j]) || !std::isfinite(r.features[j]))
        throw fail(lineno, "feature column '" + trim(header[feature_cols[j]]) + "' is not a finite number");
    }
    max_label = std::max({max_label, r.observed_label, r.clean_label});
    data.records.push_back(std::move(r));
    ++row;
  }
  data.class_count = declared_classes > 0 ? declared_classes : max_label + 1;
  return data;
}

std::string format_meta(const DatasetBundle& b) {
  const int C = b.class_count();
  std::vector<int> blue(C, 0), red(C, 0), noise(C, 0);
  for (const auto& r : b.train) {
    if (r.noise_kind == NoiseKind::kBlue) ++blue[r.clean_label];
    if (r.noise_kind == NoiseKind::kRed) ++red[r.observed_label];
  }
  for (int c = 0; c < C; ++c) noise[c] = blue[c] + red[c];
  const auto& ref = b.meta.clean_counts.empty() ? b.class_counts : b.meta.clean_counts;
  const auto [mn, mx] = std::minmax_element(ref.begin(), ref.end());
  std::ostringstream os;
  os << std::setprecision(17);
  os << "class_count=" << C << '\n'
     << "feature_dim=" << b.feature_dim() << '\n'
     << "context_count=" << b.meta.context_count << '\n'
     << "n_max=" << b.meta.n_max << '\n'
     << "eta=" << b.meta.eta << '\n'
     << "rho=" << b.meta.rho << '\n'
     << "blue_fraction=" << b.meta.blue_fraction << '\n'
     << "test_per_class=" << b.meta.test_per_class << '\n'
     << "seed=" << b.meta.seed << '\n'
     << "train_size=" << b.train.size() << '\n'
     << "test_size=" << b.test.size() << '\n'
     << "clean_counts=" << join_ints(b.meta.clean_counts) << '\n'
     << "class_counts=" << join_ints(b.class_counts) << '\n'
     << "blue_counts=" << join_ints(blue) << '\n'
     << "red_counts=" << join_ints(red) << '\n'
     << "noise_counts=" << join_ints(noise) << '\n'
     << "max_min_ratio=" << (ref.empty() || *mn == 0 ? 0.0 : static_cast<double>(*mx) / *mn) << '\n'
     << "realized_noise_rate="
     << (b.train.empty() ? 0.0 : static_cast<double>(b.noise_count()) / b.train.size()) << '\n';
  return os.str();
}

void write_bundle(const DatasetBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_csv(b.train, b.class_count(), (dir / "train.csv").string());
  write_csv(b.test, b.class_count(), (dir / "test.csv").string());
  std::ofstream meta(dir / "meta.txt");
  if (!meta) throw Error("cannot write " + (dir / "meta.txt").string());
  meta << format_meta(b);
}

DatasetBundle read_bundle(const std::filesystem::path& dir) {
  DatasetBundle b;
  std::ifstream meta(dir / "meta.txt");
  if (!meta) throw ParseError("missing " + (dir / "meta.txt").string());
  std::string line;
  std::map<std::string, std::string> kv;
  while (std::getline(meta, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("meta.txt: expected key=value, got '" + line + "'");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto num = [&](const std::string& key, auto& out) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    if (!parse_number(it->second, out)) throw ParseError("meta.txt: bad value for '" + key + "'");
  };
  num("class_count", b.meta.class_count);
  num("feature_dim", b.meta.feature_dim);
  num("context_count", b.meta.context_count);
  num("n_max", b.meta.n_max);
  num("eta", b.meta.eta);
  num("rho", b.meta.rho);
  num("blue_fraction", b.meta.blue_fraction);
  num("test_per_class", b.meta.test_per_class);
  num("seed", b.meta.seed);
  if (kv.count("clean_counts")) b.meta.clean_counts = parse_ints(kv["clean_counts"], "clean_counts");

  CsvData train = read_csv((dir / "train.csv").string());
  CsvData test = read_csv((dir / "test.csv").string());
  if (b.meta.class_count <= 0) b.meta.class_count = std::max(train.class_count, test.class_count);
  if (train.class_count > b.meta.class_count || test.class_count > b.meta.class_count)
    throw ParseError("bundle: labels exceed class_count in meta.txt");
  if (!train.records.empty() && !test.records.empty() && train.feature_dim != test.feature_dim)
    throw ParseError("bundle: train and test feature widths differ");
  b.train = std::move(train.records);
  b.test = std::move(test.records);
  if (b.meta.feature_dim <= 0) b.meta.feature_dim = train.feature_dim;
  b.class_counts.assign(b.meta.class_count, 0);
  b.refresh_counts();
  return b;
}

nn::Matrix feature_matrix(std::span<const SampleRecord> records) {
  if (records.empty()) return nn::Matrix(0, 0);
  const auto d = static_cast<Eigen::Index>(records.front().features.size());
  nn::Matrix m(static_cast<Eigen::Index>(records.size()), d);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (static_cast<Eigen::Index>(records[i].features.size()) != d)
      throw ShapeError("feature_matrix: ragged feature vectors");
    m.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(records[i].features.data(), d);
  }
  return m;
}

}  // namespace h2e::data
