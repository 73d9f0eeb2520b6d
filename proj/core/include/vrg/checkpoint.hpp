#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "vrg/networks.hpp"
#include "vrg/tensor.hpp"

namespace vrg::ckpt {

// Everything a run needs to continue: architecture, all parameters and
// persistent buffers (under rnet./bnet./gen./critic. prefixes), optimizer
// slots, and position counters.  File format: magic "VRGCKPT1", u64 LE header
// length, JSON header, raw little-endian doubles in header directory order.
// All maps are sorted, so save -> load -> save reproduces identical bytes.
struct Checkpoint {
  int64_t version = 1;
  ArchConfig arch;
  std::string variant = "full";  // "full" | "no_bnet"
  std::string train_digest;      // TrainConfig digest; empty outside training
  int64_t epoch = 0;
  uint64_t seed = 0;
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> buffers;
  std::map<std::string, Tensor> opt;
  std::map<std::string, int64_t> counters;
};

// FNV-1a over the canonical JSON serialization of the config.
uint64_t arch_digest(const ArchConfig& a);

void save_checkpoint(const Checkpoint& c, const std::string& path);

// Rejects bad magic, unsupported versions, and headers whose stored arch
// digest does not match the arch they describe.
Checkpoint load_checkpoint(const std::string& path);

void store_model(Checkpoint& c, const Model& m);

struct ApplyReport {
  int64_t params_loaded = 0;
  int64_t buffers_loaded = 0;
  int64_t skipped_bnet = 0;
};

// Writes checkpoint parameters/buffers into the model; the checkpoint's arch
// must equal m.arch.  skip_bnet ignores bnet.* entries (loading a full
// checkpoint into a no_bnet run).
ApplyReport apply_model(const Checkpoint& c, Model& m, bool skip_bnet = false);

}  // namespace vrg::ckpt
