// SPDX-License-Identifier: Apache-2.0
#include "g2v/io/trajectory.hpp"

#include "g2v/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace g2v::io {

namespace {

double parse_double(const std::string& tok, std::size_t line_no) {
  // strtod accepts forms like "1e-3"; require the whole token to be consumed.
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (tok.empty() || end != tok.c_str() + tok.size()) {
    throw DataError("xyz: non-numeric coordinate \"" + tok + "\" on line " + std::to_string(line_no));
  }
  return v;
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

}  // namespace

void Trajectory::validate() const {
  if (frames.empty()) throw DataError("trajectory has no frames");
  if (!(frame_interval > 0.0)) throw DataError("trajectory frame_interval must be > 0");
  for (const auto& f : frames) {
    if (f.rows() != frames.front().rows()) throw DataError("inconsistent atom count across frames");
    if (!f.allFinite()) throw DataError("trajectory contains non-finite coordinates");
  }
}

Trajectory parse_xyz_trajectory(const std::string& text, double frame_interval) {
  std::istringstream in(text);
  Trajectory traj;
  traj.frame_interval = frame_interval;
  std::string line;
  std::size_t line_no = 0;
  long long n_first = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    long long n = 0;
    {
      std::istringstream cs(line);
      std::string extra;
      if (!(cs >> n) || (cs >> extra) || n <= 0) {
        throw DataError("xyz: expected atom count on line " + std::to_string(line_no));
      }
    }
    if (n_first < 0) n_first = n;
    if (n != n_first) {
      throw DataError("xyz: inconsistent atom count (frame " + std::to_string(traj.frames.size()) + " has " +
                      std::to_string(n) + ", expected " + std::to_string(n_first) + ")");
    }
    if (!std::getline(in, line)) throw DataError("xyz: truncated final frame (missing comment line)");
    ++line_no;
    Frame f(n, 3);
    for (long long i = 0; i < n; ++i) {
      if (!std::getline(in, line)) {
        throw DataError("xyz: truncated final frame (" + std::to_string(i) + " of " + std::to_string(n) +
                        " atoms)");
      }
      ++line_no;
      std::istringstream ls(line);
      std::string sym, xs, ys, zs;
      if (!(ls >> sym >> xs >> ys >> zs)) throw DataError("xyz: malformed atom line " + std::to_string(line_no));
      f(i, 0) = parse_double(xs, line_no);
      f(i, 1) = parse_double(ys, line_no);
      f(i, 2) = parse_double(zs, line_no);
      if (traj.frames.empty()) traj.element_symbols.push_back(sym);
    }
    traj.frames.push_back(std::move(f));
  }
  traj.validate();
  return traj;
}

Trajectory load_xyz_trajectory(const std::filesystem::path& path, double frame_interval) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trajectory: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_xyz_trajectory(ss.str(), frame_interval);
}

void write_xyz_trajectory(const Trajectory& traj, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write trajectory: " + path.string());
  out << std::setprecision(17);
  for (std::size_t t = 0; t < traj.frames.size(); ++t) {
    const auto& f = traj.frames[t];
    out << f.rows() << "\nframe " << t << '\n';
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
      const std::string& sym =
          static_cast<std::size_t>(i) < traj.element_symbols.size() ? traj.element_symbols[i] : std::string("X");
      out << sym << ' ' << f(i, 0) << ' ' << f(i, 1) << ' ' << f(i, 2) << '\n';
    }
  }
}

Frame select_atoms(const Frame& frame, const AtomSelection& sel) {
  Frame out(static_cast<Eigen::Index>(sel.indices.size()), 3);
  for (std::size_t k = 0; k < sel.indices.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) = frame.row(static_cast<Eigen::Index>(sel.indices[k]));
  }
  return out;
}

Trajectory stride_frames(const Trajectory& traj, std::size_t stride) {
  if (stride == 0) throw ConfigError("stride must be >= 1");
  Trajectory out;
  out.element_symbols = traj.element_symbols;
  out.frame_interval = traj.frame_interval * static_cast<double>(stride);
  for (std::size_t t = 0; t < traj.frames.size(); t += stride) out.frames.push_back(traj.frames[t]);
  return out;
}

const char* element_symbol(int z) {
  static const char* kSymbols[] = {"X",  "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne",
                                   "Na", "Mg", "Al", "Si", "P",  "S",  "Cl", "Ar", "K",  "Ca"};
  if (z >= 0 && z < static_cast<int>(std::size(kSymbols))) return kSymbols[z];
  return "X";
}

}  // namespace g2v::io
