/* C interface to the facial image compression pipeline. All functions return
 * a status code; on failure fasdiff_last_error() carries a human-readable
 * message for the calling thread. Strings returned through char** must be
 * released with fasdiff_string_free(). */
#ifndef FASDIFF_H
#define FASDIFF_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FASDIFF_API __declspec(dllexport)
#else
#define FASDIFF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fasdiff_status {
    FASDIFF_OK = 0,
    FASDIFF_ERR_USAGE = 1,   /* bad arguments, flags, shapes */
    FASDIFF_ERR_DATA = 2,    /* missing/corrupt files, datasets, checkpoints */
    FASDIFF_ERR_NUMERIC = 3, /* non-finite loss or other numeric failure */
    FASDIFF_ERR_INTERNAL = 4
} fasdiff_status;

FASDIFF_API const char* fasdiff_version(void);

/* message from the most recent failing call on this thread */
FASDIFF_API const char* fasdiff_last_error(void);

FASDIFF_API void fasdiff_string_free(char* s);

/* Resolves a run configuration to its full JSON form: explicit file path if
 * given, else the FASDIFF_CONFIG environment variable, else built-in
 * defaults. The result is what every other call expects as config_json. */
FASDIFF_API fasdiff_status fasdiff_resolve_config(const char* path_or_null, char** out_json);

/* Renders a synthetic labeled face corpus into dir (images + labels file). */
FASDIFF_API fasdiff_status fasdiff_generate_dataset(const char* dir, int count, uint64_t seed,
                                                    int image_size);

/* Training entry points. config_json is the resolved configuration text;
 * artifacts land under workdir following the fixed layout. */
FASDIFF_API fasdiff_status fasdiff_pretrain_autoencoder(const char* config_json, const char* workdir);
FASDIFF_API fasdiff_status fasdiff_train_classifier(const char* config_json, const char* workdir);

/* stage is 1 or 2; variant selects an ablation ("full" for the real model) */
FASDIFF_API fasdiff_status fasdiff_train(const char* config_json, const char* workdir, int stage,
                                         const char* variant);

/* Metric sweep of one checkpoint over the validation split; writes per-image
 * and summary records under workdir/eval/<tag>/ and returns the summary as
 * JSON when out_summary_json is non-NULL. */
FASDIFF_API fasdiff_status fasdiff_eval(const char* config_json, const char* workdir,
                                        const char* checkpoint, const char* tag,
                                        char** out_summary_json);

/* Rate-distortion sweep across the lambda ladder at one stage/variant;
 * writes rd-<metric>.txt/.png files under workdir/eval/. */
FASDIFF_API fasdiff_status fasdiff_rd_curve(const char* config_json, const char* workdir, int stage,
                                            const char* variant);

/* BD-rate table of every ablation variant against the full model. */
FASDIFF_API fasdiff_status fasdiff_ablation_report(const char* config_json, const char* workdir,
                                                   int stage);

/* Codec over one loaded checkpoint. Handles are independent and may be used
 * from different threads (one thread per handle). */
typedef struct fasdiff_codec fasdiff_codec;

FASDIFF_API fasdiff_status fasdiff_codec_open(const char* checkpoint_path, fasdiff_codec** out);
FASDIFF_API void fasdiff_codec_close(fasdiff_codec* codec);

/* caption may be NULL or empty for the neutral fallback; bpp_out optional */
FASDIFF_API fasdiff_status fasdiff_codec_encode_file(fasdiff_codec* codec, const char* image_png,
                                                     const char* out_stream, const char* caption,
                                                     double* bpp_out);

/* preliminary_png may be NULL to skip writing the pre-diffusion estimate;
 * mu weights the face branch of the conditioning fusion */
FASDIFF_API fasdiff_status fasdiff_codec_decode_file(fasdiff_codec* codec, const char* stream_path,
                                                     const char* out_png, const char* preliminary_png,
                                                     int64_t steps, uint64_t seed, double mu);

/* PSNR between two image files, in dB (HUGE_VAL when identical). */
FASDIFF_API fasdiff_status fasdiff_psnr(const char* png_a, const char* png_b, double* out_db);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* FASDIFF_H */
