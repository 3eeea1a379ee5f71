#pragma once

#include "mmloc/core_types.hpp"
#include "mmloc/image.hpp"
#include "mmloc/mask_targets.hpp"
#include "mmloc/annotations.hpp"
#include "mmloc/layers.hpp"
#include "mmloc/loss.hpp"
#include "mmloc/network.hpp"
#include "mmloc/checkpoint.hpp"
#include "mmloc/training.hpp"
#include "mmloc/localization.hpp"
#include "mmloc/tracking.hpp"
#include "mmloc/synthetic.hpp"
