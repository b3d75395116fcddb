#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "glss/common.hpp"
#include "glss/image.hpp"

namespace glss {

enum class DomainTag { source, target };
enum class SplitTag { train, test };

inline std::string to_string(DomainTag tag) {
    return tag == DomainTag::source ? "source" : "target";
}
inline std::string to_string(SplitTag tag) {
    return tag == SplitTag::train ? "train" : "test";
}

struct DatasetItem {
    ImageTensor image;
    MaskTensor mask;
    std::string id;
};

// An ordered collection of (image, mask, id) triples from one domain/split.
// Every image and mask access is counted on shared counters that survive
// copies, so a pipeline can assert that a given dataset (e.g. target images,
// or target masks before the metrics stage) was never consumed too early.
class DomainDataset {
public:
    DomainDataset(DomainTag domain, SplitTag split)
        : domain_(domain), split_(split),
          image_reads_(std::make_shared<std::atomic<std::uint64_t>>(0)),
          mask_reads_(std::make_shared<std::atomic<std::uint64_t>>(0)) {}

    void add(DatasetItem item) {
        for (const auto& existing : items_) {
            if (existing.id == item.id) {
                throw InvalidInputError("duplicate dataset id: " + item.id);
            }
        }
        if (item.image.height() != item.mask.height() || item.image.width() != item.mask.width()) {
            throw InvalidInputError("image/mask shape mismatch for id: " + item.id);
        }
        if (item.image.channels() != 1) {
            throw InvalidInputError("dataset images must be single-channel: " + item.id);
        }
        items_.push_back(std::move(item));
    }

    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }

    // Counted access: reading an image registers one read on the shared
    // counter.
    const ImageTensor& image(std::size_t i) const {
        image_reads_->fetch_add(1, std::memory_order_relaxed);
        return items_.at(i).image;
    }

    const MaskTensor& mask(std::size_t i) const {
        mask_reads_->fetch_add(1, std::memory_order_relaxed);
        return items_.at(i).mask;
    }
    const std::string& id(std::size_t i) const { return items_.at(i).id; }

    std::uint64_t image_reads() const { return image_reads_->load(std::memory_order_relaxed); }
    void reset_image_reads() const { image_reads_->store(0, std::memory_order_relaxed); }
    std::uint64_t mask_reads() const { return mask_reads_->load(std::memory_order_relaxed); }
    void reset_mask_reads() const { mask_reads_->store(0, std::memory_order_relaxed); }

    DomainTag domain_tag() const { return domain_; }
    SplitTag split_tag() const { return split_; }

private:
    DomainTag domain_;
    SplitTag split_;
    std::vector<DatasetItem> items_;
    std::shared_ptr<std::atomic<std::uint64_t>> image_reads_;
    std::shared_ptr<std::atomic<std::uint64_t>> mask_reads_;
};

}  // namespace glss
