#pragma once

#include "croco/common.hpp"
#include "croco/config.hpp"
#include "croco/contrastive.hpp"
#include "croco/encoder.hpp"
#include "croco/evaluator.hpp"
#include "croco/image.hpp"
#include "croco/localizer.hpp"
#include "croco/mapstore.hpp"
#include "croco/raster.hpp"
#include "croco/sampling.hpp"
#include "croco/synthgen.hpp"
#include "croco/trainer.hpp"
