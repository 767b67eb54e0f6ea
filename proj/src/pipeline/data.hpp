#pragma once

#include <string>
#include <vector>

#include "media/dataset.hpp"
#include "models/classifier.hpp"

// Dataset loaded fully into memory. The corpus is small by design, so every
// image is decoded once up front and batches are cheap tensor copies.
namespace fasdiff::pipeline {

struct LoadedDataset {
    std::string root;
    std::vector<Tensor<float>> images;  // each [3, H, W]
    std::vector<std::string> captions;
    std::vector<media::FaceAttributes> attrs;

    static LoadedDataset load(const std::string& dir) {
        auto ds = media::load_dataset(dir);
        LoadedDataset out;
        out.root = dir;
        out.images.reserve(ds.items.size());
        for (size_t i = 0; i < ds.items.size(); ++i) {
            out.images.push_back(ds.load_image(i));
            out.captions.push_back(ds.caption(i));
            out.attrs.push_back(ds.items[i].attrs);
        }
        check_data(!out.images.empty(), "dataset at " + dir + " is empty");
        return out;
    }

    int64_t size() const { return static_cast<int64_t>(images.size()); }

    Tensor<float> batch(const std::vector<int64_t>& idx) const {
        check_arg(!idx.empty(), "empty batch");
        const auto& s = images.front().shape();
        Tensor<float> out(Shape{static_cast<int64_t>(idx.size()), s[0], s[1], s[2]});
        int64_t per = s[0] * s[1] * s[2];
        for (size_t i = 0; i < idx.size(); ++i) {
            const auto& img = images[static_cast<size_t>(idx[i])];
            std::copy(img.data(), img.data() + per, out.data() + static_cast<int64_t>(i) * per);
        }
        return out;
    }

    std::vector<std::string> batch_captions(const std::vector<int64_t>& idx) const {
        std::vector<std::string> out;
        out.reserve(idx.size());
        for (int64_t i : idx) out.push_back(captions[static_cast<size_t>(i)]);
        return out;
    }

    Tensor<float> batch_targets(const std::vector<int64_t>& idx) const {
        Tensor<float> out(Shape{static_cast<int64_t>(idx.size()), models::kAttributeCount});
        for (size_t i = 0; i < idx.size(); ++i) {
            auto t = models::attribute_targets(attrs[static_cast<size_t>(idx[i])]);
            for (int64_t j = 0; j < models::kAttributeCount; ++j)
                out.at2(static_cast<int64_t>(i), j) = t[static_cast<size_t>(j)];
        }
        return out;
    }
};

}  // namespace fasdiff::pipeline
