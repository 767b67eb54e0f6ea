#pragma once

#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

// Procedurally rendered face portraits with known attributes. The renderer
// is deterministic in (attributes, seed) so datasets can be regenerated
// bit for bit, and the attribute labels double as classifier targets and
// caption material.
namespace fasdiff::media {

struct FaceAttributes {
    bool male = false;
    bool smiling = false;
    bool glasses = false;
    bool beard = false;  // only rendered on male faces
    bool dark_hair = false;
};

// natural-language description used as the text side channel
std::string caption_for(const FaceAttributes& a);

// fallback caption when no attributes are available
inline const char* kNeutralCaption = "a face";

FaceAttributes random_attributes(RngStream& rng);

// one portrait, [3, size, size] in [0,1]
Tensor<float> render_face(const FaceAttributes& a, uint64_t seed, int64_t size = 64);

struct DatasetItem {
    std::string file;  // path relative to the dataset root
    FaceAttributes attrs;
};

struct Dataset {
    std::string root;
    std::vector<DatasetItem> items;

    Tensor<float> load_image(size_t index) const;
    std::string caption(size_t index) const { return caption_for(items[index].attrs); }
};

// Writes images/NNNN.png plus attributes.json under root.
void generate_dataset(const std::string& root, int64_t count, uint64_t seed, int64_t size = 64);

Dataset load_dataset(const std::string& root);

}  // namespace fasdiff::media
