#pragma once

#include "llambda/action_capture.hpp"
#include "llambda/blob_file.hpp"
#include "llambda/captioner.hpp"
#include "llambda/error.hpp"
#include "llambda/fedsim.hpp"
#include "llambda/frame.hpp"
#include "llambda/frame_filter.hpp"
#include "llambda/image.hpp"
#include "llambda/labeler/model_io.hpp"
#include "llambda/labeler/network.hpp"
#include "llambda/labeler/ntxent.hpp"
#include "llambda/labeler/predict.hpp"
#include "llambda/labeler/train.hpp"
#include "llambda/llm_client.hpp"
#include "llambda/llm_http.hpp"
#include "llambda/lora.hpp"
#include "llambda/pipeline/capture.hpp"
#include "llambda/pipeline/config.hpp"
#include "llambda/pipeline/crop_set.hpp"
#include "llambda/pipeline/lexical.hpp"
#include "llambda/pipeline/run_all.hpp"
#include "llambda/pipeline/synthetic.hpp"
#include "llambda/random.hpp"
#include "llambda/sha256.hpp"
#include "llambda/stream_io.hpp"
