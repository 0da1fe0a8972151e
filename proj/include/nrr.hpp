#pragma once

// Every module in one include.

#include "nrr/config.hpp"
#include "nrr/dataset.hpp"
#include "nrr/degrade.hpp"
#include "nrr/errors.hpp"
#include "nrr/evalkit.hpp"
#include "nrr/image.hpp"
#include "nrr/losses.hpp"
#include "nrr/metrics.hpp"
#include "nrr/nn.hpp"
#include "nrr/optim.hpp"
#include "nrr/percept.hpp"
#include "nrr/png_io.hpp"
#include "nrr/rng.hpp"
#include "nrr/stereowarp.hpp"
#include "nrr/synth.hpp"
#include "nrr/tensor_file.hpp"
#include "nrr/trainkit.hpp"
#include "nrr/unet.hpp"
