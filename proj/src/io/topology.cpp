// SPDX-License-Identifier: Apache-2.0
#include "g2v/io/topology.hpp"

#include "g2v/error.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace g2v::io {

void Topology::validate() const {
  const std::size_t n = elements.size();
  if (residue_index.size() != n || atom_names.size() != n) {
    throw DataError("topology: per-atom sequences have different lengths");
  }
  for (int z : elements) {
    if (z < 1 || z > 100) throw DataError("topology: atomic number " + std::to_string(z) + " outside 1-100");
  }
  std::vector<bool> seen(residue_names.size(), false);
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && residue_index[i] < residue_index[i - 1]) {
      throw DataError("topology: decreasing residue index at atom " + std::to_string(i));
    }
    if (residue_index[i] >= residue_names.size()) {
      throw DataError("topology: residue index " + std::to_string(residue_index[i]) + " >= residue count");
    }
    seen[residue_index[i]] = true;
  }
  for (std::size_t r = 0; r < seen.size(); ++r) {
    if (!seen[r]) throw DataError("topology: gap in residue indices (residue " + std::to_string(r) + " absent)");
  }
}

void CoarseGrainPartition::validate(std::size_t selection_size) const {
  std::vector<int> owner(selection_size, -1);
  for (std::size_t m = 0; m < subsets.size(); ++m) {
    if (subsets[m].empty()) throw DataError("partition: empty subset " + std::to_string(m));
    for (auto i : subsets[m]) {
      if (i >= selection_size) throw DataError("partition: index outside selection");
      if (owner[i] != -1) throw DataError("partition: subsets overlap at atom " + std::to_string(i));
      owner[i] = static_cast<int>(m);
    }
  }
  for (std::size_t i = 0; i < selection_size; ++i) {
    if (owner[i] == -1) throw DataError("partition: selected atom " + std::to_string(i) + " not covered");
  }
}

Topology parse_topology(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t n_atoms = 0;
  std::size_t n_res = 0;
  if (!std::getline(in, line)) throw DataError("topology: missing header");
  {
    std::istringstream hs(line);
    if (!(hs >> n_atoms >> n_res)) throw DataError("topology: header must be \"N R\"");
  }
  Topology top;
  top.residue_names.assign(n_res, "");
  std::map<std::size_t, std::string> names;
  for (std::size_t i = 0; i < n_atoms; ++i) {
    if (!std::getline(in, line)) throw DataError("topology: expected " + std::to_string(n_atoms) + " atom lines");
    std::istringstream ls(line);
    long long z = 0;
    long long res = 0;
    std::string atom_name;
    std::string res_name;
    if (!(ls >> z >> atom_name >> res >> res_name)) {
      throw DataError("topology: malformed atom line " + std::to_string(i + 2));
    }
    if (z < 1 || z > 100) throw DataError("topology: atomic number " + std::to_string(z) + " outside 1-100");
    if (res < 0) throw DataError("topology: negative residue index");
    top.elements.push_back(static_cast<int>(z));
    top.atom_names.push_back(atom_name);
    top.residue_index.push_back(static_cast<std::size_t>(res));
    if (static_cast<std::size_t>(res) < n_res) {
      auto& slot = top.residue_names[static_cast<std::size_t>(res)];
      if (!slot.empty() && slot != res_name) {
        throw DataError("topology: residue " + std::to_string(res) + " has inconsistent names");
      }
      slot = res_name;
    }
  }
  top.validate();
  return top;
}

Topology load_topology(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open topology: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_topology(ss.str());
}

void write_topology(const Topology& top, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write topology: " + path.string());
  out << top.atom_count() << ' ' << top.residue_count() << '\n';
  for (std::size_t i = 0; i < top.atom_count(); ++i) {
    out << top.elements[i] << ' ' << top.atom_names[i] << ' ' << top.residue_index[i] << ' '
        << top.residue_names[top.residue_index[i]] << '\n';
  }
}

AtomSelection select_heavy_atoms(const Topology& top) {
  AtomSelection sel;
  for (std::size_t i = 0; i < top.atom_count(); ++i) {
    if (top.elements[i] != 1) sel.indices.push_back(i);
  }
  if (sel.indices.empty()) throw DataError("heavy-atom selection is empty");
  return sel;
}

AtomSelection select_all_atoms(const Topology& top) {
  AtomSelection sel;
  sel.indices.resize(top.atom_count());
  for (std::size_t i = 0; i < sel.indices.size(); ++i) sel.indices[i] = i;
  if (sel.indices.empty()) throw DataError("selection is empty");
  return sel;
}

CoarseGrainPartition partition_by_residue(const Topology& top, const AtomSelection& sel) {
  if (sel.indices.empty()) throw DataError("partition: empty selection");
  for (std::size_t k = 0; k < sel.indices.size(); ++k) {
    if (sel.indices[k] >= top.atom_count()) throw DataError("partition: selection index out of range");
    if (k > 0 && sel.indices[k] <= sel.indices[k - 1]) throw DataError("partition: selection not increasing");
  }
  CoarseGrainPartition part;
  for (std::size_t k = 0; k < sel.indices.size(); ++k) {
    const std::size_t res = top.residue_index[sel.indices[k]];
    if (part.residue_of_subset.empty() || part.residue_of_subset.back() != res) {
      part.residue_of_subset.push_back(res);
      part.subsets.emplace_back();
    }
    part.subsets.back().push_back(k);
  }
  return part;
}

std::vector<std::size_t> ca_indices(const Topology& top) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < top.atom_count(); ++i) {
    if (top.atom_names[i] == "CA") out.push_back(i);
  }
  return out;
}

char one_letter_code(const std::string& residue_name) {
  static const std::map<std::string, char> kCodes = {
      {"ALA", 'A'}, {"ARG", 'R'}, {"ASN", 'N'}, {"ASP", 'D'}, {"CYS", 'C'}, {"GLN", 'Q'}, {"GLU", 'E'},
      {"GLY", 'G'}, {"HIS", 'H'}, {"HIE", 'H'}, {"HID", 'H'}, {"HIP", 'H'}, {"ILE", 'I'}, {"LEU", 'L'},
      {"LYS", 'K'}, {"MET", 'M'}, {"PHE", 'F'}, {"PRO", 'P'}, {"SER", 'S'}, {"THR", 'T'}, {"TRP", 'W'},
      {"TYR", 'Y'}, {"VAL", 'V'}, {"NLE", 'n'}};
  auto it = kCodes.find(residue_name);
  return it == kCodes.end() ? 'X' : it->second;
}

}  // namespace g2v::io
