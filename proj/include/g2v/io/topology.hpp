// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace g2v::io {

/// Per-atom identities plus residue annotations.
struct Topology {
  std::vector<int> elements;           // atomic numbers, 1..100
  std::vector<std::size_t> residue_index;
  std::vector<std::string> residue_names;  // one per residue
  std::vector<std::string> atom_names;

  std::size_t atom_count() const { return elements.size(); }
  std::size_t residue_count() const { return residue_names.size(); }

  /// Throws DataError when an invariant is broken.
  void validate() const;
};

/// Strictly increasing atom indices into a Topology.
struct AtomSelection {
  std::vector<std::size_t> indices;
};

/// Disjoint, non-empty subsets of selected atoms; entries are positions within
/// the selection (0..|selection|-1), not raw topology indices.
struct CoarseGrainPartition {
  std::vector<std::vector<std::size_t>> subsets;
  /// Residue index each subset came from, when built by residue.
  std::vector<std::size_t> residue_of_subset;

  std::size_t token_count() const { return subsets.size(); }
  void validate(std::size_t selection_size) const;
};

Topology load_topology(const std::filesystem::path& path);
void write_topology(const Topology& top, const std::filesystem::path& path);
Topology parse_topology(const std::string& text);

AtomSelection select_heavy_atoms(const Topology& top);
AtomSelection select_all_atoms(const Topology& top);
CoarseGrainPartition partition_by_residue(const Topology& top, const AtomSelection& sel);

/// Indices (into the full topology) of atoms named "CA", ascending.
std::vector<std::size_t> ca_indices(const Topology& top);

/// One-letter amino-acid code, 'X' when unknown.
char one_letter_code(const std::string& residue_name);

}  // namespace g2v::io
