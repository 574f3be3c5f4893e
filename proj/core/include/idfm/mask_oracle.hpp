#pragma once

#include "idfm/attn_mask.hpp"
#include "idfm/masks.hpp"
#include "idfm/partition.hpp"

namespace idfm {

// Brute-force construction of the same masks, evaluating the case analysis
// per (query, key) pair with naive set-membership scans. Shares no code or
// precomputation with build_dis/build_har; exists purely to check them.
AttnMask oracle_mask(const PartitionLayout& layout, Regime regime);

}  // namespace idfm
