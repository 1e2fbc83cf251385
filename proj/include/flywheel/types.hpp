#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace flywheel {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;
using Index = Eigen::Index;

// Encoded (context, response) pair; length equals the world dimension.
using FeatureVector = Vector;

inline constexpr Index kDefaultDim = 16;
inline constexpr Index kMinDim = 10;

// Feature slot layout shared by responses and encodings.
namespace slot {
inline constexpr Index kTokenLength = 0;
inline constexpr Index kEmojiCount = 1;
inline constexpr Index kContainsList = 2;
inline constexpr Index kTemplatedPhrase = 3;
inline constexpr Index kSentiment = 4;
inline constexpr Index kNamedCount = 5;

// Slots below are produced by encode() only.
inline constexpr Index kLengthFit = 5;
inline constexpr Index kHistoryEmoji = 6;
inline constexpr Index kHistoryLength = 7;
inline constexpr Index kLatentBegin = 8;
}  // namespace slot

class EncodingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace flywheel
