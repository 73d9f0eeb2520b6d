#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "vrg/checkpoint.hpp"
#include "vrg/errors.hpp"

using namespace vrg;
namespace fs = std::filesystem;

namespace {

ArchConfig tiny_arch() {
  ArchConfig a;
  a.image_channels = 1;
  a.patch_size = 32;
  a.latent_dim = 3;
  a.rnet_channels = {2, 3, 4, 4};
  a.disc_channels = {3, 4, 4};
  a.bnet_width = 3;
  a.bnet_stages = 2;
  a.bnet_resblocks = 1;
  a.attention_blocks = 2;
  return a;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

bool params_equal(const nn::ParamStore& a, const nn::ParamStore& b) {
  if (a.params().size() != b.params().size()) return false;
  for (const auto& [name, var] : a.params()) {
    const Tensor& other = b.param(name)->value;
    if (!var->value.same_shape(other)) return false;
    for (int64_t i = 0; i < other.size(); ++i)
      if (var->value.data()[i] != other.data()[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact and idempotent") {
  const fs::path dir = fresh_dir("vrg_test_ckpt");
  Model m(tiny_arch(), 31);

  ckpt::Checkpoint c;
  ckpt::store_model(c, m);
  c.variant = "full";
  c.train_digest = "00deadbeef00cafe";
  c.epoch = 5;
  c.seed = 31;
  c.opt["adam.gen.fc.weight.m"] = Tensor::full({4}, 0.125);
  c.counters["adam.gen.t"] = 17;

  const std::string p1 = (dir / "a.vrg").string();
  const std::string p2 = (dir / "b.vrg").string();
  ckpt::save_checkpoint(c, p1);
  const ckpt::Checkpoint back = ckpt::load_checkpoint(p1);
  CHECK(back.version == 1);
  CHECK(back.arch == m.arch);
  CHECK(back.variant == "full");
  CHECK(back.train_digest == "00deadbeef00cafe");
  CHECK(back.epoch == 5);
  CHECK(back.seed == 31);
  CHECK(back.counters.at("adam.gen.t") == 17);
  REQUIRE(back.params.size() == c.params.size());
  for (const auto& [name, t] : c.params) {
    const Tensor& other = back.params.at(name);
    REQUIRE(other.same_shape(t));
    for (int64_t i = 0; i < t.size(); ++i)
      CHECK(other.data()[i] == t.data()[i]);
  }
  REQUIRE(back.buffers.size() == c.buffers.size());
  CHECK(back.opt.at("adam.gen.fc.weight.m").data()[3] == 0.125);

  // save -> load -> save produces identical bytes.
  ckpt::save_checkpoint(back, p2);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("checkpoint rejects tampering, bad magic, and wrong version") {
  const fs::path dir = fresh_dir("vrg_test_ckpt_bad");
  Model m(tiny_arch(), 7);
  ckpt::Checkpoint c;
  ckpt::store_model(c, m);
  const std::string path = (dir / "c.vrg").string();
  ckpt::save_checkpoint(c, path);

  auto rewrite = [&](const std::string& from, const std::string& to,
                     const std::string& out) {
    std::string bytes = slurp(path);
    const size_t pos = bytes.find(from);
    REQUIRE(pos != std::string::npos);
    REQUIRE(from.size() == to.size());  // keep the header length intact
    bytes.replace(pos, from.size(), to);
    std::ofstream(out, std::ios::binary) << bytes;
  };

  const std::string tampered = (dir / "tampered.vrg").string();
  rewrite("\"patch_size\":32", "\"patch_size\":64", tampered);
  CHECK_THROWS_AS(ckpt::load_checkpoint(tampered), CheckpointError);

  const std::string wrong_version = (dir / "version.vrg").string();
  rewrite("\"version\":1", "\"version\":7", wrong_version);
  CHECK_THROWS_AS(ckpt::load_checkpoint(wrong_version), CheckpointError);

  const std::string bad_magic = (dir / "magic.vrg").string();
  {
    std::string bytes = slurp(path);
    bytes[0] = 'X';
    std::ofstream(bad_magic, std::ios::binary) << bytes;
  }
  CHECK_THROWS_AS(ckpt::load_checkpoint(bad_magic), CheckpointError);

  const std::string truncated = (dir / "short.vrg").string();
  std::ofstream(truncated, std::ios::binary) << slurp(path).substr(0, 200);
  CHECK_THROWS_AS(ckpt::load_checkpoint(truncated), CheckpointError);

  CHECK_THROWS_AS(ckpt::load_checkpoint((dir / "missing.vrg").string()),
                  CheckpointError);
}

TEST_CASE("apply_model restores parameters and honors skip_bnet") {
  const fs::path dir = fresh_dir("vrg_test_ckpt_apply");
  const ArchConfig arch = tiny_arch();
  Model src(arch, 1);
  Model dst(arch, 2);
  REQUIRE(!params_equal(src.rnet.store(), dst.rnet.store()));

  ckpt::Checkpoint c;
  ckpt::store_model(c, src);
  const auto rep = ckpt::apply_model(c, dst);
  CHECK(rep.params_loaded > 0);
  CHECK(rep.skipped_bnet == 0);
  CHECK(params_equal(src.rnet.store(), dst.rnet.store()));
  CHECK(params_equal(src.bnet.store(), dst.bnet.store()));
  CHECK(params_equal(src.gen.store(), dst.gen.store()));
  CHECK(params_equal(src.critic.store(), dst.critic.store()));

  Model other(arch, 3);
  const auto rep2 = ckpt::apply_model(c, other, /*skip_bnet=*/true);
  CHECK(rep2.skipped_bnet > 0);
  CHECK(params_equal(src.gen.store(), other.gen.store()));
  CHECK(!params_equal(src.bnet.store(), other.bnet.store()));

  ArchConfig bigger = arch;
  bigger.bnet_width = 5;
  Model mismatched(bigger, 4);
  CHECK_THROWS_AS(ckpt::apply_model(c, mismatched), ArgumentError);

  // Round trip through disk keeps apply behavior identical.
  const std::string path = (dir / "src.vrg").string();
  ckpt::save_checkpoint(c, path);
  Model fresh(arch, 9);
  ckpt::apply_model(ckpt::load_checkpoint(path), fresh);
  CHECK(params_equal(src.critic.store(), fresh.critic.store()));
}

TEST_CASE("arch digest is stable and sensitive") {
  const ArchConfig a = tiny_arch();
  ArchConfig b = a;
  CHECK(ckpt::arch_digest(a) == ckpt::arch_digest(b));
  b.latent_dim = 4;
  CHECK(ckpt::arch_digest(a) != ckpt::arch_digest(b));
}
