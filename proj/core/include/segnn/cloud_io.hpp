#pragma once

#include <string>

#include "segnn/cloud.hpp"

namespace segnn {

enum class CloudFormat { kText, kBinary };

/// kText for ".sncloud", kBinary for ".sncb"; ArgumentError otherwise.
CloudFormat cloud_format_from_path(const std::string& path);

/// Reads a cloud. Text: header "SNCLOUD 1 POINTS <M> COLOR <0|1> LABEL <0|1>"
/// followed by M rows "x y z [r g b] [label]". Binary: magic "SNC1",
/// little-endian u32 M, u8 color flag, u8 label flag, f32 coords,
/// optional f32 colors, optional i32 labels.
/// Throws ParseError naming the offending line/offset, IoError on I/O failure.
LabeledCloud load_cloud(const std::string& path, CloudFormat format);

/// Writes a cloud; binary round-trips losslessly, text to 9 significant
/// digits (exact for f32 storage). Throws IoError on failure.
void save_cloud(const LabeledCloud& cloud, const std::string& path, CloudFormat format);

}  // namespace segnn
