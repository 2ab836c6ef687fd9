#pragma once

#include <string>
#include <vector>

#include "dive/error.hpp"

namespace dive {

// Ordered set of voxel indices with provenance (which selection produced it).
struct VoxelSet {
    std::vector<int> indices;
    std::string provenance;

    std::size_t size() const { return indices.size(); }
    bool empty() const { return indices.empty(); }

    void validate_against(long voxel_count) const {
        if (indices.empty()) throw EmptyInputError("voxel set is empty (" + provenance + ")");
        for (int i : indices) {
            if (i < 0 || i >= voxel_count) {
                throw ArgumentError("voxel index " + std::to_string(i) + " outside [0, " +
                                    std::to_string(voxel_count) + ")");
            }
        }
    }
};

}  // namespace dive
