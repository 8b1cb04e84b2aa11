#pragma once

#include "avb/dataio.hpp"
#include "avb/experiments.hpp"
#include "avb/losses.hpp"
#include "avb/manifest.hpp"
#include "avb/nn.hpp"
#include "avb/stats.hpp"
#include "avb/train.hpp"
