#pragma once

// Run configuration files (flat `section.key = value` text) and the HBIE1
// binary density format.

#include <charconv>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hbie/common.hpp"
#include "hbie/geometry.hpp"

namespace hbie {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

// A real number, optionally followed by `pi` or `*pi`; a bare `pi` is π.
inline bool parse_real_token(std::string_view t, double& out) {
  double scale = 1;
  for (std::string_view suffix : {"*pi", "pi"})
    if (t.size() >= suffix.size() && t.substr(t.size() - suffix.size()) == suffix) {
      scale = pi;
      t.remove_suffix(suffix.size());
      break;
    }
  if (t.empty() || t == "+") {
    out = scale;
    return scale != 1;
  }
  if (t == "-") {
    out = -scale;
    return scale != 1;
  }
  if (t.front() == '+') t.remove_prefix(1);
  double v;
  auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (r.ec != std::errc() || r.ptr != t.data() + t.size()) return false;
  out = v * scale;
  return true;
}

}  // namespace detail

/// Parses `2.25`, `3pi`, `2.25+0.1i`, `-0.5i`, `(2.25,0.1)`.
inline cplx parse_complex(const std::string& text) {
  const std::string s = detail::trim(text);
  auto fail = [&]() -> cplx { throw ConfigError("not a number: '" + text + "'"); };
  if (s.empty()) return fail();
  if (s.front() == '(' && s.back() == ')') {
    const auto c = s.find(',');
    if (c == std::string::npos) return fail();
    double re, im;
    if (!detail::parse_real_token(detail::trim(s.substr(1, c - 1)), re) ||
        !detail::parse_real_token(detail::trim(s.substr(c + 1, s.size() - c - 2)), im))
      return fail();
    return {re, im};
  }
  double whole;
  if (detail::parse_real_token(s, whole)) return whole;
  if (s.back() == 'i' || s.back() == 'j') {
    const std::string body = s.substr(0, s.size() - 1);
    // Split at the last sign that is not part of an exponent.
    std::size_t split = std::string::npos;
    for (std::size_t k = body.size(); k-- > 1;)
      if ((body[k] == '+' || body[k] == '-') && body[k - 1] != 'e' && body[k - 1] != 'E') {
        split = k;
        break;
      }
    double re = 0, im;
    if (split == std::string::npos) {
      if (!detail::parse_real_token(body, im)) return fail();
    } else if (!detail::parse_real_token(body.substr(0, split), re) ||
               !detail::parse_real_token(body.substr(split), im)) {
      return fail();
    }
    return {re, im};
  }
  return fail();
}

inline double parse_real(const std::string& text) {
  const cplx z = parse_complex(text);
  if (z.imag() != 0) throw ConfigError("expected a real number: '" + text + "'");
  return z.real();
}

/// Shortest round-trip representation.
inline std::string format_real(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string format_complex(cplx z) {
  std::string s = format_real(z.real());
  if (z.imag() != 0) s += (z.imag() < 0 ? "-" : "+") + format_real(std::abs(z.imag())) + "i";
  return s;
}

/// Flat key-value configuration. Every getter records the value it returns
/// (explicit or default) so the resolved configuration can be written back.
class Config {
 public:
  static Config parse(std::istream& is, const std::string& origin = "config") {
    Config c;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      const std::string where = origin + ":" + std::to_string(lineno);
      if (eq == std::string::npos) throw ConfigError(where + ": expected 'section.key = value'");
      const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
      if (key.find('.') == std::string::npos || key.front() == '.' || key.back() == '.')
        throw ConfigError(where + ": key '" + key + "' must be sectioned (section.key)");
      if (c.values_.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
      c.values_[key] = value;
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    return parse(is, path);
  }

  /// Command-line override `key=value`.
  void set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    values_[detail::trim(assignment.substr(0, eq))] = detail::trim(assignment.substr(eq + 1));
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string str(const std::string& key, const std::string& def) const { return record(key, get(key, def)); }

  std::string required(const std::string& key) const {
    if (!has(key)) throw ConfigError("missing required key '" + key + "'");
    return record(key, values_.at(key));
  }

  double real(const std::string& key, double def) const {
    if (!has(key)) return record_num(key, def);
    return wrap(key, [&] { return parse_real(record(key, values_.at(key))); });
  }

  cplx complex(const std::string& key, cplx def) const {
    if (!has(key)) {
      record(key, format_complex(def));
      return def;
    }
    return wrap(key, [&] { return parse_complex(record(key, values_.at(key))); });
  }

  long integer(const std::string& key, long def) const {
    const double v = real(key, static_cast<double>(def));
    if (v != std::floor(v)) throw ConfigError(key + ": expected an integer");
    return static_cast<long>(v);
  }

  bool flag(const std::string& key, bool def) const {
    const std::string v = str(key, def ? "true" : "false");
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
  }

  std::vector<double> reals(const std::string& key, const std::string& def) const {
    std::istringstream is(str(key, def));
    std::vector<double> out;
    std::string tok;
    while (is >> tok) out.push_back(wrap(key, [&] { return parse_real(tok); }));
    return out;
  }

  Vec3 vec3(const std::string& key, const Vec3& def) const {
    const auto v = reals(key, format_real(def.x) + " " + format_real(def.y) + " " + format_real(def.z));
    if (v.size() != 3) throw ConfigError(key + ": expected three numbers");
    return {v[0], v[1], v[2]};
  }

  /// Keys present in the file that no getter asked for.
  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!resolved_.count(k)) out.push_back(k);
    return out;
  }

  /// Resolved configuration (every key read, with defaults filled in).
  void write_resolved(std::ostream& os) const {
    std::string section;
    for (const auto& [k, v] : resolved_) {
      const std::string s = k.substr(0, k.find('.'));
      if (s != section) {
        if (!section.empty()) os << '\n';
        os << "# " << s << '\n';
        section = s;
      }
      os << k << " = " << v << '\n';
    }
  }

 private:
  std::string get(const std::string& key, const std::string& def) const {
    auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
  }
  const std::string& record(const std::string& key, const std::string& v) const {
    resolved_[key] = v;
    return v;
  }
  double record_num(const std::string& key, double v) const {
    record(key, format_real(v));
    return v;
  }
  template <class F>
  static auto wrap(const std::string& key, F&& f) -> decltype(f()) {
    try {
      return f();
    } catch (const ConfigError& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }

  std::map<std::string, std::string> values_;
  mutable std::map<std::string, std::string> resolved_;
};

// ---------------------------------------------------------------------------
// HBIE1 density files
//
// Little-endian layout:
//   char[5] "HBIE1", uint8 version (1), uint16 reserved (0)
//   uint64 N, uint32 N_C, uint32 P, uint32 channels (8), uint32 reserved
//   double omega, Re κ_e, Im κ_e, Re κ_i, Im κ_i
//   double mesh fingerprint[4]: centroid of the points, mean |x|²
//   N × 8 complex doubles (re, im), point-major in DensityBlock channel order

struct MeshFingerprint {
  double v[4] = {};

  static MeshFingerprint of(const SurfaceDiscretization& disc) {
    MeshFingerprint f;
    for (const Vec3& x : disc.points()) {
      f.v[0] += x.x;
      f.v[1] += x.y;
      f.v[2] += x.z;
      f.v[3] += dot(x, x);
    }
    for (double& c : f.v) c /= static_cast<double>(std::max<std::size_t>(disc.size(), 1));
    return f;
  }
};

struct DensityFile {
  static constexpr std::uint8_t version = 1;
  std::uint64_t n = 0;
  std::uint32_t nc = 0, patches = 0;
  double omega = 0;
  cplx kappa_e, kappa_i;
  MeshFingerprint fingerprint;
  DensityBlock dens;

  /// Throws std::runtime_error if the file was written for another mesh.
  void check_matches(const SurfaceDiscretization& disc) const {
    if (n != disc.size() || nc != disc.nc() || patches != disc.num_patches())
      throw std::runtime_error("density file is for a mesh with N=" + std::to_string(n) + ", N_C=" +
                               std::to_string(nc) + ", P=" + std::to_string(patches) + "; current mesh has N=" +
                               std::to_string(disc.size()) + ", N_C=" + std::to_string(disc.nc()) +
                               ", P=" + std::to_string(disc.num_patches()));
    const MeshFingerprint f = MeshFingerprint::of(disc);
    for (int k = 0; k < 4; ++k)
      if (std::abs(f.v[k] - fingerprint.v[k]) > 1e-9 * (1 + std::abs(f.v[k])))
        throw std::runtime_error("density file was written for a different mesh (point fingerprint mismatch)");
  }
};

inline DensityFile make_density_file(const SurfaceDiscretization& disc, double omega, cplx ke, cplx ki,
                                     DensityBlock dens) {
  if (dens.n != disc.size()) throw std::invalid_argument("density file: block size does not match the mesh");
  DensityFile f;
  f.n = disc.size();
  f.nc = static_cast<std::uint32_t>(disc.nc());
  f.patches = static_cast<std::uint32_t>(disc.num_patches());
  f.omega = omega;
  f.kappa_e = ke;
  f.kappa_i = ki;
  f.fingerprint = MeshFingerprint::of(disc);
  f.dens = std::move(dens);
  return f;
}

namespace detail {

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(std::istream& is, const std::string& path) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error(path + ": truncated HBIE1 header");
  return v;
}

}  // namespace detail

inline void write_density_file(const std::string& path, const DensityFile& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write("HBIE1", 5);
  detail::put<std::uint8_t>(os, DensityFile::version);
  detail::put<std::uint16_t>(os, 0);
  detail::put<std::uint64_t>(os, f.n);
  detail::put<std::uint32_t>(os, f.nc);
  detail::put<std::uint32_t>(os, f.patches);
  detail::put<std::uint32_t>(os, DensityBlock::channels);
  detail::put<std::uint32_t>(os, 0);
  for (double v : {f.omega, f.kappa_e.real(), f.kappa_e.imag(), f.kappa_i.real(), f.kappa_i.imag()})
    detail::put<double>(os, v);
  for (double v : f.fingerprint.v) detail::put<double>(os, v);
  os.write(reinterpret_cast<const char*>(f.dens.v.data()),
           static_cast<std::streamsize>(f.dens.v.size() * sizeof(cplx)));
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline DensityFile read_density_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open density file " + path);
  char magic[5];
  if (!is.read(magic, 5) || std::memcmp(magic, "HBIE1", 5) != 0)
    throw std::runtime_error(path + ": not an HBIE1 density file");
  const auto ver = detail::take<std::uint8_t>(is, path);
  if (ver != DensityFile::version)
    throw std::runtime_error(path + ": unsupported HBIE1 version " + std::to_string(ver));
  detail::take<std::uint16_t>(is, path);
  DensityFile f;
  f.n = detail::take<std::uint64_t>(is, path);
  f.nc = detail::take<std::uint32_t>(is, path);
  f.patches = detail::take<std::uint32_t>(is, path);
  const auto channels = detail::take<std::uint32_t>(is, path);
  if (channels != DensityBlock::channels)
    throw std::runtime_error(path + ": expected 8 density channels, found " + std::to_string(channels));
  detail::take<std::uint32_t>(is, path);
  double m[5];
  for (double& v : m) v = detail::take<double>(is, path);
  f.omega = m[0];
  f.kappa_e = {m[1], m[2]};
  f.kappa_i = {m[3], m[4]};
  for (double& v : f.fingerprint.v) v = detail::take<double>(is, path);
  if (f.n > (std::uint64_t(1) << 32)) throw std::runtime_error(path + ": implausible point count");
  f.dens = DensityBlock(static_cast<std::size_t>(f.n));
  const auto bytes = static_cast<std::streamsize>(f.dens.v.size() * sizeof(cplx));
  if (!is.read(reinterpret_cast<char*>(f.dens.v.data()), bytes))
    throw std::runtime_error(path + ": truncated density data");
  if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error(path + ": trailing bytes after density data");
  return f;
}

}  // namespace hbie
