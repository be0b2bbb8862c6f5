#pragma once

#include "xmodal/catalog.hpp"
#include "xmodal/checksum.hpp"
#include "xmodal/encoder.hpp"
#include "xmodal/engine.hpp"
#include "xmodal/error.hpp"
#include "xmodal/eval.hpp"
#include "xmodal/manifest.hpp"
#include "xmodal/npy.hpp"
#include "xmodal/scoring.hpp"
#include "xmodal/service.hpp"
#include "xmodal/store.hpp"
#include "xmodal/synthetic.hpp"
