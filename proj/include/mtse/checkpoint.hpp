#pragma once

#include <string>

#include "mtse/encoder.hpp"
#include "mtse/training.hpp"

namespace mtse {

// "MTCK" container: magic, u32 version, length-prefixed UTF-8 JSON config
// block, then named f32 tensor records (u16 name length, name bytes, u8 rank,
// u32 extents, little-endian payload) until end of file.
struct Checkpoint {
  EncoderConfig config;
  EncoderParams params;
  OptimizerState opt;
  long step = 0;
  std::string metrics_json;  // snapshot stored in the config block
};

void save_checkpoint(const std::string& path, const EncoderConfig& cfg,
                     const EncoderParams& params,
                     const OptimizerState* opt = nullptr, long step = 0,
                     const std::string& metrics_json = "{}");

Checkpoint load_checkpoint(const std::string& path);

// JSON round-trips for configs (used by checkpoints, manifests and the CLI
// config file).
std::string encoder_config_to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json_text(const std::string& text);

}  // namespace mtse
