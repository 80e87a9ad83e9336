#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "tagd/core.hpp"

namespace tagd {

struct CsvLayout {
  std::string time_column = "time";
  std::array<std::string, kAxes> axis_columns = {"gFx", "gFy", "gFz"};
  char delimiter = ',';
  double sample_rate_hz = 100.0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '"' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(delim, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline bool blank(std::string_view line) { return trim(line).empty(); }

}  // namespace detail

// Reads one gesture recording. Only the time column and the three axis columns
// are used; any other columns are ignored. The time column must be
// nondecreasing but otherwise plays no role.
inline GestureSample parse_csv(std::istream& in, const CsvLayout& layout, int user_id) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::blank(line)) break;
  }
  if (detail::blank(line)) throw DataError("csv: missing header row");

  const auto header = detail::split_fields(line, layout.delimiter);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), std::string_view(name));
    if (it == header.end()) throw DataError("csv layout: column '" + name + "' not found in header");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t time_col = column(layout.time_column);
  std::array<std::size_t, kAxes> axis_col{};
  for (std::size_t a = 0; a < kAxes; ++a) axis_col[a] = column(layout.axis_columns[a]);
  if (axis_col[0] == axis_col[1] || axis_col[0] == axis_col[2] || axis_col[1] == axis_col[2])
    throw DataError("csv layout: axis columns must be distinct");
  const std::size_t needed = std::max({time_col, axis_col[0], axis_col[1], axis_col[2]}) + 1;

  GestureSample sample;
  sample.user_id = user_id;
  sample.sample_rate_hz = layout.sample_rate_hz;
  double last_time = -std::numeric_limits<double>::infinity();
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::blank(line)) continue;
    const auto fields = detail::split_fields(line, layout.delimiter);
    if (fields.size() < needed)
      throw DataError("csv parse error at line " + std::to_string(line_no) + ": expected at least " +
                      std::to_string(needed) + " fields");
    double t = 0;
    if (!detail::parse_double(fields[time_col], t))
      throw DataError("csv parse error at line " + std::to_string(line_no) + ": non-numeric time '" +
                      std::string(fields[time_col]) + "'");
    if (t < last_time) throw DataError("csv parse error at line " + std::to_string(line_no) + ": time decreases");
    last_time = t;
    Accel row{};
    for (std::size_t a = 0; a < kAxes; ++a) {
      if (!detail::parse_double(fields[axis_col[a]], row[a]) || !std::isfinite(row[a]))
        throw DataError("csv parse error at line " + std::to_string(line_no) + ": non-numeric value '" +
                        std::string(fields[axis_col[a]]) + "'");
    }
    sample.seq.push_back(row);
  }
  if (sample.seq.size() < 2)
    throw DataError("csv: too short, " + std::to_string(sample.seq.size()) + " data row(s) (need at least 2)");
  return sample;
}

inline GestureSample parse_csv_file(const std::filesystem::path& file, const CsvLayout& layout, int user_id) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot read file " + file.string());
  try {
    return parse_csv(in, layout, user_id);
  } catch (const DataError& e) {
    throw DataError(file.string() + ": " + e.what());
  }
}

// Writes a sample in the same schema parse_csv reads, so exported data can be re-ingested.
inline void write_csv(std::ostream& out, const GestureSample& s, const CsvLayout& layout = {}) {
  const char d = layout.delimiter;
  out << layout.time_column << d << layout.axis_columns[0] << d << layout.axis_columns[1] << d
      << layout.axis_columns[2] << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < s.seq.size(); ++i) {
    out << static_cast<double>(i) / s.sample_rate_hz;
    for (double v : s.seq[i]) out << d << v;
    out << '\n';
  }
}

// Loads root/<user>/*.csv. Users are labelled by sorted directory name and
// files are read in sorted order, so labels depend only on the names.
inline Dataset load_dir(const std::filesystem::path& root, const CsvLayout& layout,
                        std::vector<std::string>* user_names = nullptr) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw DataError("not a directory: " + root.string());
  std::vector<fs::path> users;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) users.push_back(entry.path());
  }
  if (users.empty()) throw DataError("no user directories under " + root.string());
  std::sort(users.begin(), users.end());

  std::vector<GestureSample> samples;
  for (std::size_t u = 0; u < users.size(); ++u) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(users[u])) {
      if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
    }
    if (files.empty()) throw DataError("no .csv files in directory " + users[u].string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) samples.push_back(parse_csv_file(f, layout, static_cast<int>(u)));
  }
  if (user_names) {
    user_names->clear();
    for (const auto& u : users) user_names->push_back(u.filename().string());
  }
  return Dataset(std::move(samples), static_cast<int>(users.size()));
}

struct SynthProfile {
  int num_users = 10;
  int samples_per_user = 50;
  int min_length = 300;
  int max_length = 700;
  int harmonics_per_axis = 3;
  double noise_sigma = 0.05;
  std::uint64_t seed = 7;
};

namespace detail {

struct Harmonic {
  double cycles;
  double amplitude;
  double phase;
};

struct UserSignal {
  std::array<double, kAxes> offset{};
  std::array<std::vector<Harmonic>, kAxes> harmonics;

  // u is normalised time in [0, 1] over the whole signature.
  double eval(std::size_t axis, double u) const {
    double v = offset[axis];
    for (const auto& h : harmonics[axis]) v += h.amplitude * std::sin(2.0 * std::numbers::pi * h.cycles * u + h.phase);
    return v;
  }
};

inline UserSignal draw_user_signal(const SynthProfile& p, int user) {
  RandomStream stream = RandomStream(p.seed).derive(static_cast<std::uint64_t>(user));
  UserSignal sig;
  for (std::size_t a = 0; a < kAxes; ++a) {
    // z rests near 1 g, x and y near 0 g, as for a phone held flat
    sig.offset[a] = (a == 2 ? 1.0 : 0.0) + stream.uniform(-0.3, 0.3);
    for (int h = 0; h < p.harmonics_per_axis; ++h) {
      sig.harmonics[a].push_back({stream.uniform(0.5, 4.0), stream.uniform(0.1, 0.8),
                                  stream.uniform(0.0, 2.0 * std::numbers::pi)});
    }
  }
  return sig;
}

}  // namespace detail

// Synthetic stand-in for a recorded corpus: every user is a fixed sum of
// sinusoids per axis (drawn from (seed, user)), each signature is that signal
// traced over a random number of rows, plus white noise.
inline Dataset synth_dataset(const SynthProfile& p) {
  if (p.num_users <= 0 || p.samples_per_user <= 0 || p.harmonics_per_axis <= 0)
    throw InvalidArgument("synth profile: users, samples and harmonics must be positive");
  if (p.min_length < 2 || p.max_length < p.min_length) throw InvalidArgument("synth profile: need 2 <= min <= max length");
  if (!(p.noise_sigma >= 0.0)) throw InvalidArgument("synth profile: noise_sigma must be nonnegative");

  std::vector<GestureSample> samples;
  samples.reserve(static_cast<std::size_t>(p.num_users) * static_cast<std::size_t>(p.samples_per_user));
  const RandomStream root(RandomStream::mix(p.seed) ^ 0x5eedULL);
  for (int u = 0; u < p.num_users; ++u) {
    const auto sig = detail::draw_user_signal(p, u);
    for (int j = 0; j < p.samples_per_user; ++j) {
      auto stream = root.derive((static_cast<std::uint64_t>(u) << 32) | static_cast<std::uint64_t>(j));
      const auto span = static_cast<std::size_t>(p.max_length - p.min_length + 1);
      const std::size_t len = static_cast<std::size_t>(p.min_length) + stream.index(span);
      GestureSample s;
      s.user_id = u;
      s.seq.resize(len);
      for (std::size_t i = 0; i < len; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(len - 1);
        for (std::size_t a = 0; a < kAxes; ++a) {
          s.seq[i][a] = sig.eval(a, t) + (p.noise_sigma > 0 ? stream.normal(0.0, p.noise_sigma) : 0.0);
        }
      }
      samples.push_back(std::move(s));
    }
  }
  return Dataset(std::move(samples), p.num_users);
}

// Dataset container:
//   TAGDSET v1
//   users <num_users> samples <count>
//   sample <user_id> <length> <sample_rate_hz>     (once per sample)
//   <ax> <ay> <az>                                 (length rows, 17 significant digits)
//   end
inline void save_dataset(std::ostream& out, const Dataset& ds) {
  out << "TAGDSET v1\n";
  out << "users " << ds.num_users() << " samples " << ds.size() << '\n';
  out.precision(17);
  for (const auto& s : ds.samples()) {
    out << "sample " << s.user_id << ' ' << s.seq.size() << ' ' << s.sample_rate_hz << '\n';
    for (const auto& row : s.seq) out << row[0] << ' ' << row[1] << ' ' << row[2] << '\n';
  }
  out << "end\n";
}

inline Dataset load_dataset(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> std::string& {
    if (!std::getline(in, line)) throw DataError("dataset container truncated after line " + std::to_string(line_no));
    ++line_no;
    return line;
  };
  auto fail = [&](const std::string& what) {
    return DataError("dataset container corrupt at line " + std::to_string(line_no) + ": " + what);
  };
  if (detail::trim(next()) != "TAGDSET v1") throw DataError("not a TAGDSET v1 container (bad magic line)");

  std::istringstream head(next());
  std::string kw1, kw2;
  long long users = 0, count = 0;
  if (!(head >> kw1 >> users >> kw2 >> count) || kw1 != "users" || kw2 != "samples" || users <= 0 || count < 0)
    throw fail("bad header");

  std::vector<GestureSample> samples;
  samples.reserve(static_cast<std::size_t>(count));
  for (long long i = 0; i < count; ++i) {
    std::istringstream sh(next());
    std::string kw;
    GestureSample s;
    long long len = 0;
    std::string rate;
    if (!(sh >> kw >> s.user_id >> len >> rate) || kw != "sample" || len < 0 ||
        !detail::parse_double(rate, s.sample_rate_hz))
      throw fail("bad sample header");
    s.seq.resize(static_cast<std::size_t>(len));
    for (auto& row : s.seq) {
      const auto fields = detail::split_fields(next(), ' ');
      if (fields.size() != kAxes) throw fail("expected 3 values");
      for (std::size_t a = 0; a < kAxes; ++a)
        if (!detail::parse_double(fields[a], row[a])) throw fail("non-numeric value");
    }
    samples.push_back(std::move(s));
  }
  if (detail::trim(next()) != "end") throw fail("missing end marker");
  return Dataset(std::move(samples), static_cast<int>(users));
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  save_dataset(out, ds);
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  return load_dataset(in);
}

}  // namespace tagd
