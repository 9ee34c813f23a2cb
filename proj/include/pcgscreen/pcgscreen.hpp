#pragma once

#include "pcgscreen/audio_io.hpp"
#include "pcgscreen/common.hpp"
#include "pcgscreen/dsp.hpp"
#include "pcgscreen/evaluation.hpp"
#include "pcgscreen/handcrafted.hpp"
#include "pcgscreen/metrics.hpp"
#include "pcgscreen/mfcc.hpp"
#include "pcgscreen/nn.hpp"
#include "pcgscreen/pipeline.hpp"
#include "pcgscreen/random.hpp"
#include "pcgscreen/selection.hpp"
#include "pcgscreen/synth.hpp"
