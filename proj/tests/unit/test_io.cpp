// SPDX-License-Identifier: Apache-2.0
#include "g2v/error.hpp"
#include "g2v/io/archive.hpp"
#include "g2v/io/digest.hpp"
#include "g2v/io/features.hpp"
#include "g2v/io/split.hpp"
#include "g2v/io/toy.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace g2v;
using namespace g2v::io;
using Eigen::Index;

namespace {

const char* kTopology =
    "7 3\n"
    "7 N 0 ALA\n"
    "6 CA 0 ALA\n"
    "1 H 0 ALA\n"
    "6 CA 1 GLY\n"
    "8 O 1 GLY\n"
    "6 CA 2 SER\n"
    "8 OG 2 SER\n";

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("sha256 and git blob ids match published vectors") {
    CHECK(to_hex(sha256(std::string_view("abc"))) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(to_hex(sha256(std::string_view(""))) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(git_blob_id("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
    CHECK(git_blob_id("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  }

  TEST_CASE("topology parsing, selection and residue partition") {
    const Topology top = parse_topology(kTopology);
    CHECK(top.atom_count() == 7);
    CHECK(top.residue_count() == 3);
    const AtomSelection heavy = select_heavy_atoms(top);
    CHECK(heavy.indices == std::vector<std::size_t>{0, 1, 3, 4, 5, 6});
    const CoarseGrainPartition part = partition_by_residue(top, heavy);
    REQUIRE(part.token_count() == 3);
    CHECK(part.subsets[0] == std::vector<std::size_t>{0, 1});
    CHECK(part.subsets[1] == std::vector<std::size_t>{2, 3});
    CHECK(part.subsets[2] == std::vector<std::size_t>{4, 5});
    CHECK(ca_indices(top) == std::vector<std::size_t>{1, 3, 5});
    CHECK(one_letter_code("SER") == 'S');
    CHECK(one_letter_code("XYZ") == 'X');
  }

  TEST_CASE("malformed topologies are rejected") {
    CHECK_THROWS_AS(parse_topology("2 1\n6 CA 0 ALA\n"), DataError);
    CHECK_THROWS_AS(parse_topology("1 1\n101 X 0 ALA\n"), DataError);
    CHECK_THROWS_AS(parse_topology("2 2\n6 CA 1 ALA\n6 CA 0 GLY\n"), DataError);
    CHECK_THROWS_AS(load_topology("/nonexistent/top.txt"), DataError);
  }

  TEST_CASE("xyz round trip and striding") {
    Trajectory t;
    t.frame_interval = 0.1;
    for (int f = 0; f < 5; ++f) {
      Frame x(2, 3);
      x << f, 0.5, -1.25, 1.0 / 3.0, 2.0, f * 0.1;
      t.frames.push_back(x);
    }
    t.element_symbols = {"C", "O"};
    const auto path = std::filesystem::temp_directory_path() / "g2v_unit_traj.xyz";
    write_xyz_trajectory(t, path);
    const Trajectory back = load_xyz_trajectory(path, 0.1);
    REQUIRE(back.frame_count() == 5);
    for (int f = 0; f < 5; ++f) CHECK((back.frames[f] - t.frames[f]).norm() == 0.0);
    const Trajectory s = stride_frames(back, 2);
    CHECK(s.frame_count() == 3);
    CHECK(s.frame_interval == doctest::Approx(0.2));
    CHECK_THROWS_AS(parse_xyz_trajectory("2\nframe\nC 0 0 0\n", 0.1), DataError);
    CHECK_THROWS_AS(parse_xyz_trajectory("1\nframe\nC 0 zero 0\n", 0.1), DataError);
  }

  TEST_CASE("lag conversion rejects non-integral lags") {
    CHECK(lag_to_frames(1.0, 0.2) == 5);
    CHECK(lag_to_frames(2.0, 0.1, 4) == 5);
    CHECK_THROWS_AS(lag_to_frames(3.0, 0.4), ConfigError);
    CHECK_THROWS_AS(lag_to_frames(0.1, 0.2), ConfigError);
    try {
      lag_to_frames(3.0, 0.4);
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("non-integral lag in frames") != std::string::npos);
    }
  }

  TEST_CASE("split layout: first half segmented, second half validation") {
    const SplitSpec s = make_split(100, 0.5, 10, 3);
    CHECK(s.train_runs.size() == 5);
    for (const auto& r : s.train_runs) {
      CHECK(r.size() == 5);
      CHECK(r.end <= 50);
    }
    REQUIRE(s.valid_runs.size() == 1);
    CHECK(s.valid_runs[0] == FrameRun{50, 100});
    CHECK(make_split(100, 0.5, 10, 3) == s);
    CHECK_THROWS_AS(make_split(100, 0.0, 10, 3), ConfigError);
    CHECK_THROWS_AS(make_split(10, 1.0, 10, 3), DataError);
  }

  TEST_CASE("sampled pairs stay inside one run") {
    const SplitSpec s = make_split(200, 0.4, 5, 11);
    PairSampler sampler(s, Partition::kTrain, 3, 5);
    const auto all = sampler.enumerate();
    CHECK(all.size() == sampler.admissible_count());
    const std::set<std::pair<std::size_t, std::size_t>> allowed(all.begin(), all.end());
    for (const auto& p : sampler.next(2000).pairs) CHECK(allowed.count(p) == 1);
    CHECK_THROWS_AS(PairSampler(s, Partition::kTrain, 50, 1), DataError);
  }

  TEST_CASE("archive round trip and corruption detection") {
    FeatureArchive a;
    a.frames = 2;
    a.tokens = 3;
    a.channels = 4;
    for (int i = 0; i < 24; ++i) a.scalar.push_back(0.5f * static_cast<float>(i));
    a.vector = std::vector<float>(72, -1.5f);
    a.encoder_digest = sha256(std::string_view("e"));
    a.selection_digest = sha256(std::string_view("s"));
    a.partition_digest = sha256(std::string_view("p"));
    const auto bytes = encode_archive(a);
    CHECK(decode_archive(bytes) == a);
    CHECK(a.scalar_at(1, 2, 3) == 11.5f);
    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(decode_archive(truncated), DataError);
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_archive(bad), DataError);
    const auto path = std::filesystem::temp_directory_path() / "g2v_unit.g2v";
    write_archive(a, path);
    CHECK_THROWS_AS(read_archive(path, sha256(std::string_view("other"))), DataError);
    CHECK(read_archive(path, a.encoder_digest) == a);
  }

  TEST_CASE("dihedral convention on planar constructions") {
    const Eigen::Vector3d a(1, 1, 0), b(0, 0, 0), c(0, 0, 1);
    CHECK(dihedral({1, 0, 0}, b, c, {1, 0, 1}) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(std::abs(dihedral({1, 0, 0}, b, c, {-1, 0, 1})) == doctest::Approx(M_PI));
    CHECK(dihedral({1, 0, 0}, b, c, {0, 1, 1}) == doctest::Approx(M_PI / 2));
    const Eigen::Vector3d d = place_atom(a, b, c, 1.5, 1.9, -0.7);
    CHECK((d - c).norm() == doctest::Approx(1.5));
    CHECK(dihedral(a, b, c, d) == doctest::Approx(-0.7));
  }

  TEST_CASE("toy system: energy gradient and labels") {
    const ToySystem sys = generate_toy_trajectory(1000, 1.0, 4);
    CHECK(sys.trajectory.frame_count() == 1000);
    CHECK(sys.labels.size() == 1000);
    const Frame& x = sys.trajectory.frames[500];
    Frame g;
    toy_energy(x, {}, &g);
    const double h = 1e-6;
    for (Index i = 0; i < 4; ++i)
      for (int a = 0; a < 3; ++a) {
        Frame xp = x, xm = x;
        xp(i, a) += h;
        xm(i, a) -= h;
        const double fd = (toy_energy(xp, {}, nullptr) - toy_energy(xm, {}, nullptr)) / (2 * h);
        CHECK(g(i, a) == doctest::Approx(fd).epsilon(1e-5));
      }
    // the label is the sign of the torsion
    for (std::size_t t = 0; t < 1000; t += 97) {
      const Frame& f = sys.trajectory.frames[t];
      const double phi = dihedral(f.row(0).transpose(), f.row(1).transpose(), f.row(2).transpose(), f.row(3).transpose());
      CHECK((phi > 0 ? 1 : -1) == sys.labels[t]);
    }
    CHECK_THROWS(generate_toy_trajectory(10, 1.0, 4));
  }

  TEST_CASE("CA features have the documented widths") {
    const ToySystem sys = generate_toy_trajectory(1000, 1.0, 2);
    CHECK(ca_distance_matrix(sys.trajectory, sys.topology).cols() == 6);
    const FeatureMatrix dih = ca_dihedral_matrix(sys.trajectory, sys.topology);
    CHECK(dih.cols() == 2);
    for (Index t = 0; t < dih.rows(); t += 50) CHECK(dih.row(t).norm() == doctest::Approx(1.0));
  }
}
