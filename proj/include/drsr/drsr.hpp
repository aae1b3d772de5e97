#pragma once

#include "drsr/types.hpp"
#include "drsr/linalg.hpp"
#include "drsr/penalty.hpp"
#include "drsr/rng.hpp"
#include "drsr/step1.hpp"
#include "drsr/step2.hpp"
#include "drsr/step3.hpp"
#include "drsr/tuning.hpp"
#include "drsr/pipeline.hpp"
#include "drsr/simulate.hpp"
#include "drsr/io.hpp"

namespace drsr {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace drsr
