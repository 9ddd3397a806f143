#pragma once

#include "kae/errors.hpp"
#include "kae/tolerances.hpp"
#include "kae/spectral.hpp"
#include "kae/nn.hpp"
#include "kae/spectral_reg.hpp"
#include "kae/data.hpp"
#include "kae/dmd.hpp"
#include "kae/model.hpp"
#include "kae/harness.hpp"
