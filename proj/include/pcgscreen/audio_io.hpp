#pragma once

// PCG recordings on disk: WAV codec, dataset manifest, and patient-wise splits.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcgscreen/common.hpp"
#include "pcgscreen/random.hpp"

namespace pcgscreen {

enum class Site { AV, PV, TV, MV };
enum class Label { CHD, NonCHD };
enum class Sex { M, F, Unknown };

inline constexpr std::array<Site, 4> kAllSites = {Site::AV, Site::PV, Site::TV, Site::MV};

constexpr std::string_view site_name(Site s) {
  switch (s) {
    case Site::AV: return "AV";
    case Site::PV: return "PV";
    case Site::TV: return "TV";
    case Site::MV: return "MV";
  }
  return "?";
}

constexpr std::string_view label_name(Label l) { return l == Label::CHD ? "CHD" : "NonCHD"; }

constexpr std::string_view sex_name(Sex s) {
  switch (s) {
    case Sex::M: return "M";
    case Sex::F: return "F";
    case Sex::Unknown: return "unknown";
  }
  return "unknown";
}

/// 1 for CHD (the positive class), 0 otherwise.
constexpr int label_to_int(Label l) { return l == Label::CHD ? 1 : 0; }

namespace detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    cells.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoFailure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::IoFailure, "write failed for " + path.string());
}

}  // namespace detail

inline Site parse_site(std::string_view text) {
  const auto s = detail::lower(detail::trim(text));
  if (s == "av") return Site::AV;
  if (s == "pv") return Site::PV;
  if (s == "tv") return Site::TV;
  if (s == "mv") return Site::MV;
  fail(Errc::UnknownSite, "'" + std::string(text) + "'");
}

/// Case-insensitive; accepts CHD and NonCHD with an optional '-', '_' or ' ' separator.
inline Label parse_label(std::string_view text) {
  const auto s = detail::lower(detail::trim(text));
  if (s == "chd") return Label::CHD;
  if (s == "nonchd" || s == "non-chd" || s == "non_chd" || s == "non chd") return Label::NonCHD;
  fail(Errc::UnknownLabel, "'" + std::string(text) + "'");
}

inline Sex parse_sex(std::string_view text) {
  const auto s = detail::lower(detail::trim(text));
  if (s == "m" || s == "male") return Sex::M;
  if (s == "f" || s == "female") return Sex::F;
  if (s.empty() || s == "unknown" || s == "u") return Sex::Unknown;
  fail(Errc::UnknownLabel, "sex value '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

struct Recording {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate_hz = 4000;
  std::string patient_id;
  Site site = Site::AV;

  double duration_s() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate_hz);
  }
};

struct WavReadOptions {
  int expected_rate_hz = 4000;  // 0 accepts any rate
  bool resample = false;        // linear resampling to expected_rate_hz instead of rejecting
};

/// Linear-interpolation resampler. Output length is round(n * to / from).
inline std::vector<double> resample_linear(std::span<const double> x, int from_hz, int to_hz) {
  if (x.empty() || from_hz == to_hz) return {x.begin(), x.end()};
  const auto n_out = static_cast<std::size_t>(
      std::llround(static_cast<double>(x.size()) * to_hz / static_cast<double>(from_hz)));
  std::vector<double> y(n_out);
  const double step = static_cast<double>(from_hz) / to_hz;
  for (std::size_t i = 0; i < n_out; ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto k = static_cast<std::size_t>(pos);
    if (k + 1 >= x.size()) {
      y[i] = x.back();
    } else {
      const double frac = pos - static_cast<double>(k);
      y[i] = x[k] + frac * (x[k + 1] - x[k]);
    }
  }
  return y;
}

/// Decodes an in-memory RIFF/WAVE image. Integer PCM is scaled by 2^(bits-1).
inline Recording decode_wav(std::string_view bytes, const WavReadOptions& opts = {}) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  if (n < 12 || bytes.substr(0, 4) != "RIFF" || bytes.substr(8, 4) != "WAVE")
    fail(Errc::CorruptHeader, "missing RIFF/WAVE signature");

  std::optional<std::uint16_t> format;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::optional<std::string_view> data;

  std::size_t pos = 12;
  while (pos + 8 <= n) {
    const auto id = bytes.substr(pos, 4);
    const std::uint32_t size = le::get_u32(p + pos + 4);
    pos += 8;
    if (size > n - pos) fail(Errc::CorruptHeader, "chunk '" + std::string(id) + "' overruns file");
    if (id == "fmt ") {
      if (size < 16) fail(Errc::CorruptHeader, "fmt chunk too small");
      format = le::get_u16(p + pos);
      channels = le::get_u16(p + pos + 2);
      rate = le::get_u32(p + pos + 4);
      bits = le::get_u16(p + pos + 14);
      if (*format == 0xFFFE) {  // WAVE_FORMAT_EXTENSIBLE: sub-format GUID starts at offset 24
        if (size < 40) fail(Errc::CorruptHeader, "extensible fmt chunk too small");
        format = le::get_u16(p + pos + 24);
      }
    } else if (id == "data") {
      data = bytes.substr(pos, size);
    }
    pos += size + (size & 1u);
  }
  if (!format) fail(Errc::CorruptHeader, "no fmt chunk");
  if (!data) fail(Errc::CorruptHeader, "no data chunk");
  if (channels != 1) fail(Errc::NotMono, std::to_string(channels) + " channels");
  if (rate == 0) fail(Errc::CorruptHeader, "zero sample rate");

  const bool is_pcm = *format == 1 && (bits == 8 || bits == 16 || bits == 24 || bits == 32);
  const bool is_float = *format == 3 && (bits == 32 || bits == 64);
  if (!is_pcm && !is_float)
    fail(Errc::UnsupportedEncoding,
         "format tag " + std::to_string(*format) + " with " + std::to_string(bits) + " bits");

  const std::size_t width = bits / 8;
  const std::size_t count = data->size() / width;
  const auto* d = reinterpret_cast<const unsigned char*>(data->data());

  Recording rec;
  rec.sample_rate_hz = static_cast<int>(rate);
  rec.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* s = d + i * width;
    double v = 0.0;
    if (is_float) {
      if (bits == 32) {
        v = le::get_f32(s);
      } else {
        std::uint64_t u = 0;
        for (int b = 7; b >= 0; --b) u = (u << 8) | s[b];
        v = std::bit_cast<double>(u);
      }
      if (!std::isfinite(v)) fail(Errc::CorruptHeader, "non-finite float sample");
      v = std::clamp(v, -1.0, 1.0);
    } else if (bits == 8) {
      v = (static_cast<int>(s[0]) - 128) / 128.0;
    } else if (bits == 16) {
      v = static_cast<std::int16_t>(le::get_u16(s)) / 32768.0;
    } else if (bits == 24) {
      std::int32_t x = s[0] | (s[1] << 8) | (s[2] << 16);
      if (x & 0x800000) x -= 0x1000000;
      v = x / 8388608.0;
    } else {
      v = static_cast<std::int32_t>(le::get_u32(s)) / 2147483648.0;
    }
    rec.samples[i] = v;
  }

  if (opts.expected_rate_hz > 0 && rec.sample_rate_hz != opts.expected_rate_hz) {
    if (!opts.resample)
      fail(Errc::SampleRateMismatch, std::to_string(rec.sample_rate_hz) + " Hz, expected " +
                                         std::to_string(opts.expected_rate_hz) + " Hz");
    rec.samples = resample_linear(rec.samples, rec.sample_rate_hz, opts.expected_rate_hz);
    rec.sample_rate_hz = opts.expected_rate_hz;
  }
  return rec;
}

inline Recording read_wav(const std::filesystem::path& path, const WavReadOptions& opts = {}) {
  try {
    return decode_wav(detail::read_file_bytes(path), opts);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + std::string(e.what()));
  }
}

/// 16-bit PCM quantization: round to nearest, saturating at the int16 range.
inline std::int16_t quantize_pcm16(double x) {
  const double scaled = std::nearbyint(x * 32768.0);
  return static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

/// Encodes a mono 16-bit PCM WAV image.
inline std::string encode_wav(const Recording& rec) {
  const auto data_bytes = static_cast<std::uint32_t>(rec.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  le::put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  le::put_u32(out, 16);
  le::put_u16(out, 1);  // PCM
  le::put_u16(out, 1);  // mono
  le::put_u32(out, static_cast<std::uint32_t>(rec.sample_rate_hz));
  le::put_u32(out, static_cast<std::uint32_t>(rec.sample_rate_hz) * 2);
  le::put_u16(out, 2);
  le::put_u16(out, 16);
  out += "data";
  le::put_u32(out, data_bytes);
  for (double x : rec.samples) {
    if (std::isnan(x)) fail(Errc::InvalidArgument, "NaN sample");
    le::put_u16(out, static_cast<std::uint16_t>(quantize_pcm16(x)));
  }
  return out;
}

inline void write_wav(const Recording& rec, const std::filesystem::path& path) {
  detail::write_file_bytes(path, encode_wav(rec));
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct PatientEntry {
  std::string patient_id;
  int age_months = 0;
  Sex sex = Sex::Unknown;
  Label label = Label::NonCHD;
  std::map<Site, std::filesystem::path> recordings;
};

struct PatientManifest {
  std::vector<PatientEntry> entries;  // first-appearance order

  const PatientEntry* find(std::string_view id) const {
    for (const auto& e : entries)
      if (e.patient_id == id) return &e;
    return nullptr;
  }
};

/// Parses manifest CSV text. Relative recording paths are resolved against base_dir.
inline PatientManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  static constexpr std::array<std::string_view, 6> kColumns = {"patient_id", "age_months", "sex",
                                                               "label",      "site",       "path"};
  std::istringstream in{std::string(text)};
  std::string line;
  std::optional<std::array<std::size_t, 6>> col;
  PatientManifest manifest;
  std::map<std::string, std::size_t> index_of;
  std::set<std::filesystem::path> seen_paths;
  std::size_t line_no = 0;

  while (std::getline(in, line)) {
    ++line_no;
    const auto trimmed = detail::trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    auto cells = detail::split_csv_line(trimmed);
    if (!col) {
      std::array<std::size_t, 6> c{};
      for (std::size_t k = 0; k < kColumns.size(); ++k) {
        auto it = std::find(cells.begin(), cells.end(), kColumns[k]);
        if (it == cells.end()) fail(Errc::MissingColumn, std::string(kColumns[k]));
        c[k] = static_cast<std::size_t>(it - cells.begin());
      }
      col = c;
      continue;
    }
    const auto where = "line " + std::to_string(line_no);
    const std::size_t need = *std::max_element(col->begin(), col->end());
    if (cells.size() <= need) fail(Errc::MissingColumn, where + " has too few cells");

    const auto& id = cells[(*col)[0]];
    if (id.empty()) fail(Errc::MissingColumn, where + " has an empty patient_id");
    int age = 0;
    try {
      std::size_t used = 0;
      age = std::stoi(cells[(*col)[1]], &used);
      if (used != cells[(*col)[1]].size() || age < 0) throw std::invalid_argument("age");
    } catch (const std::exception&) {
      fail(Errc::MalformedRow, where + ": bad age_months '" + cells[(*col)[1]] + "'");
    }
    const Sex sex = parse_sex(cells[(*col)[2]]);
    const Label label = parse_label(cells[(*col)[3]]);
    const Site site = parse_site(cells[(*col)[4]]);
    std::filesystem::path path = cells[(*col)[5]];
    if (path.is_relative()) path = base_dir / path;
    path = path.lexically_normal();
    if (!seen_paths.insert(path).second) fail(Errc::DuplicatePath, where + ": " + path.string());

    auto [it, inserted] = index_of.try_emplace(id, manifest.entries.size());
    if (inserted) {
      manifest.entries.push_back(PatientEntry{id, age, sex, label, {}});
    }
    auto& entry = manifest.entries[it->second];
    if (entry.age_months != age || entry.sex != sex || entry.label != label)
      fail(Errc::InconsistentPatient, where + ": demographics differ for " + id);
    if (!entry.recordings.emplace(site, path).second)
      fail(Errc::DuplicateSiteForPatient, where + ": " + id + " " + std::string(site_name(site)));
  }
  if (!col) fail(Errc::MissingColumn, "no header row");
  return manifest;
}

inline PatientManifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(detail::read_file_bytes(path), path.parent_path());
}

/// Writes the manifest with paths made relative to the manifest's directory when possible.
inline void save_manifest(const PatientManifest& manifest, const std::filesystem::path& path) {
  std::string out = "patient_id,age_months,sex,label,site,path\n";
  const auto base = path.parent_path();
  for (const auto& e : manifest.entries) {
    for (const auto& [site, p] : e.recordings) {
      auto rel = p.lexically_relative(base.empty() ? std::filesystem::path(".") : base);
      if (rel.empty() || *rel.begin() == "..") rel = p;
      out += e.patient_id + "," + std::to_string(e.age_months) + "," +
             std::string(sex_name(e.sex)) + "," + std::string(label_name(e.label)) + "," +
             std::string(site_name(site)) + "," + rel.generic_string() + "\n";
    }
  }
  detail::write_file_bytes(path, out);
}

// ---------------------------------------------------------------------------
// Patient-wise split
// ---------------------------------------------------------------------------

struct SplitAssignment {
  std::uint64_t seed = 0;
  std::array<double, 3> ratios{0.7, 0.2, 0.1};
  std::vector<std::string> train, validation, test;

  bool operator==(const SplitAssignment&) const = default;
};

inline nlohmann::json to_json(const SplitAssignment& s) {
  return nlohmann::json{{"seed", s.seed},
                        {"ratios", s.ratios},
                        {"train", s.train},
                        {"validation", s.validation},
                        {"test", s.test}};
}

inline SplitAssignment split_from_json(const nlohmann::json& j) {
  SplitAssignment s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.ratios = j.at("ratios").get<std::array<double, 3>>();
  s.train = j.at("train").get<std::vector<std::string>>();
  s.validation = j.at("validation").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  return s;
}

/// Largest-remainder apportionment of n items over the given ratios; ties go to
/// the earlier slot.
inline std::vector<std::size_t> largest_remainder(std::size_t n, std::span<const double> ratios) {
  std::vector<std::size_t> sizes(ratios.size());
  std::vector<std::pair<double, std::size_t>> frac;
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < ratios.size(); ++s) {
    const double q = static_cast<double>(n) * ratios[s];
    sizes[s] = static_cast<std::size_t>(std::floor(q + 1e-9));
    assigned += sizes[s];
    frac.emplace_back(q - static_cast<double>(sizes[s]), s);
  }
  std::stable_sort(frac.begin(), frac.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first + 1e-12; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) sizes[frac[i % frac.size()].second] += 1;
  return sizes;
}

namespace detail {

/// Patient ids grouped by label (CHD first), each group shuffled with its own stream.
inline std::array<std::vector<std::string>, 2> shuffled_by_label(const PatientManifest& m,
                                                                 std::uint64_t seed) {
  std::array<std::vector<std::string>, 2> groups;
  for (const auto& e : m.entries) groups[e.label == Label::CHD ? 0 : 1].push_back(e.patient_id);
  for (std::size_t l = 0; l < 2; ++l) {
    Rng rng(derive_seed(seed, l));
    rng.shuffle(std::span<std::string>(groups[l]));
  }
  return groups;
}

/// Per-label split sizes whose column sums match the global largest-remainder
/// sizes. Each cell is floor(n_l * r_s) plus an extra in {0, 1, 2}; the chosen
/// extras maximize the rounded-up fractional mass, preferring CHD cells and
/// earlier splits on ties. Extras of 2 are only used when nothing else fits.
inline std::array<std::array<std::size_t, 3>, 2> stratified_sizes(
    std::array<std::size_t, 2> per_label, const std::array<double, 3>& ratios) {
  const auto global = largest_remainder(per_label[0] + per_label[1], ratios);
  std::array<std::array<std::size_t, 3>, 2> base{};
  std::array<std::array<double, 3>, 2> frac{};
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t s = 0; s < 3; ++s) {
      const double q = static_cast<double>(per_label[l]) * ratios[s];
      base[l][s] = static_cast<std::size_t>(std::floor(q + 1e-9));
      frac[l][s] = std::max(0.0, q - static_cast<double>(base[l][s]));
    }

  std::optional<std::array<std::array<std::size_t, 3>, 2>> best;
  double best_score = -1e300;
  // Cells enumerated as base-3 digits, CHD/train most significant, so that
  // strict improvement keeps the earliest-preferred candidate.
  constexpr int kCells = 6;
  int total = 1;
  for (int i = 0; i < kCells; ++i) total *= 3;
  for (int code = total - 1; code >= 0; --code) {
    std::array<std::array<std::size_t, 3>, 2> extra{};
    int c = code;
    for (int cell = kCells - 1; cell >= 0; --cell) {
      extra[cell / 3][cell % 3] = static_cast<std::size_t>(c % 3);
      c /= 3;
    }
    bool ok = true;
    for (std::size_t l = 0; l < 2 && ok; ++l) {
      std::size_t row = 0;
      for (std::size_t s = 0; s < 3; ++s) row += base[l][s] + extra[l][s];
      ok = row == per_label[l];
    }
    for (std::size_t s = 0; s < 3 && ok; ++s)
      ok = base[0][s] + extra[0][s] + base[1][s] + extra[1][s] == global[s];
    if (!ok) continue;
    double score = 0.0;
    for (std::size_t l = 0; l < 2; ++l)
      for (std::size_t s = 0; s < 3; ++s) {
        if (extra[l][s] == 1) score += frac[l][s];
        if (extra[l][s] >= 2) score -= 10.0;
      }
    if (score > best_score + 1e-12) {
      best_score = score;
      std::array<std::array<std::size_t, 3>, 2> sizes{};
      for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t s = 0; s < 3; ++s) sizes[l][s] = base[l][s] + extra[l][s];
      best = sizes;
    }
  }
  if (!best) fail(Errc::InvalidArgument, "no stratified allocation exists");
  return *best;
}

}  // namespace detail

/// Patient-wise, label-stratified split into train/validation/test.
inline SplitAssignment split_patients(const PatientManifest& manifest,
                                      const std::array<double, 3>& ratios, std::uint64_t seed) {
  if (manifest.entries.empty()) fail(Errc::EmptyManifest, "no patients");
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) fail(Errc::RatioSumInvalid, "ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) fail(Errc::RatioSumInvalid, "ratios sum to " + std::to_string(sum));

  auto groups = detail::shuffled_by_label(manifest, seed);
  const auto sizes = detail::stratified_sizes({groups[0].size(), groups[1].size()}, ratios);

  std::array<std::set<std::string>, 3> chosen;
  for (std::size_t l = 0; l < 2; ++l) {
    std::size_t k = 0;
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t i = 0; i < sizes[l][s]; ++i) chosen[s].insert(groups[l][k++]);
  }

  SplitAssignment out;
  out.seed = seed;
  out.ratios = ratios;
  for (const auto& e : manifest.entries) {
    if (chosen[0].count(e.patient_id)) out.train.push_back(e.patient_id);
    else if (chosen[1].count(e.patient_id)) out.validation.push_back(e.patient_id);
    else out.test.push_back(e.patient_id);
  }
  return out;
}

}  // namespace pcgscreen
