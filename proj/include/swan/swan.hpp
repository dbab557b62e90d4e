#pragma once

#include "swan/attention.hpp"
#include "swan/checkpoint.hpp"
#include "swan/data.hpp"
#include "swan/gradcheck.hpp"
#include "swan/image_io.hpp"
#include "swan/metrics.hpp"
#include "swan/network.hpp"
#include "swan/rdca.hpp"
#include "swan/synth.hpp"
#include "swan/train.hpp"
#include "swan/wavelet.hpp"
