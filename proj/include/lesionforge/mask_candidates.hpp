#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lesionforge/image.hpp"

namespace lf {

/// One cluster offered as a possible lesion mask.
struct MaskCandidate {
  int cluster_id = 0;
  BinaryMask pixels;
  std::size_t size = 0;
  Point2 center_of_mass;
};

/// Candidates must hold strictly more than `margin` pixels and strictly fewer
/// than (total - margin).
struct CandidateFilter {
  std::size_t margin = 1000;
};

/// Selected lesion mask M, its complement, and the fiducial point p_f in M.
struct MaskPair {
  std::string image_id;
  BinaryMask mask;
  BinaryMask complement;
  PixelCoord fiducial;
};

/// One candidate per cluster whose size passes the filter, largest first
/// (ties by ascending cluster id). May be empty.
std::vector<MaskCandidate> extract_candidates(const LabelMap& labeling, const CandidateFilter& filter = {});

/// Mean member coordinate. If the pixel nearest to the mean is not a member,
/// the result snaps to the member closest to the mean (lowest (y, x) on ties).
Point2 center_of_mass(const BinaryMask& mask);

/// center_of_mass rounded to a pixel; always a member of `mask`.
PixelCoord fiducial_point(const BinaryMask& mask);

/// M is exactly the pixels labelled `cluster_id`. The fiducial defaults to
/// the centre of mass of M; a supplied fiducial must lie inside M.
MaskPair build_mask_pair(const LabelMap& labeling, int cluster_id, std::optional<PixelCoord> fiducial = std::nullopt,
                         std::string image_id = {});

}  // namespace lf
