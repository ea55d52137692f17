#pragma once

#include "wmmt/error.hpp"
#include "wmmt/matrix.hpp"
#include "wmmt/rng.hpp"
#include "wmmt/parallel.hpp"
#include "wmmt/data.hpp"
#include "wmmt/enhance.hpp"
#include "wmmt/localize.hpp"
#include "wmmt/model.hpp"
#include "wmmt/losses.hpp"
#include "wmmt/train.hpp"
#include "wmmt/synth.hpp"
#include "wmmt/metrics.hpp"
#include "wmmt/config.hpp"
