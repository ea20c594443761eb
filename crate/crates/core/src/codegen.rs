//! C source generation for the bit-exact datapath, with a golden-vector
//! conformance harness.
//!
//! The emitted function takes input codes and writes output codes. It uses
//! only `<stdint.h>`, keeps all parameters in `static const` tables and holds
//! no mutable state. Integer semantics mirror [`QuantizedModel`] exactly:
//! 64-bit accumulation, bias aligned by scaling, floor-based round-half-even
//! or truncating right shifts, saturation or two's-complement wrap, and the
//! stored sigmoid table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fault::FaultScope;
use crate::fixedpoint::{FixedPointFormat, Overflow, Rounding};
use crate::nn::{Activation, QuantizedModel, SIGMOID_TABLE_SIZE};

/// Environment variable naming the C compiler command (may include arguments).
pub const COMPILER_ENV: &str = "EDGEREL_CC";
pub const DEFAULT_COMPILER: &str = "cc";
pub const STRICT_FLAGS: &[&str] = &[
    "-std=c99",
    "-pedantic",
    "-Wall",
    "-Wextra",
    "-Wconversion",
    "-Wsign-conversion",
    "-Wshadow",
    "-Werror",
    "-O1",
];
pub const HEADER_NAME: &str = "model.h";
pub const SOURCE_NAME: &str = "model.c";
pub const HARNESS_NAME: &str = "harness.c";
pub const FUNCTION_NAME: &str = "edgerel_infer";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerManifest {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weight_format: String,
    pub bias_format: String,
    pub activation_format: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    /// SHA-256 of the model file JSON.
    pub model_sha256: String,
    pub scope: FaultScope,
    pub input_dim: usize,
    pub output_dim: usize,
    pub input_format: String,
    pub layers: Vec<LayerManifest>,
    pub vector_count: usize,
}

/// `model.h` and `model.c`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSource {
    pub header: String,
    pub source: String,
    pub manifest: Manifest,
}

/// Golden vectors and the expected codes computed by the interpreter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Harness {
    pub inputs: Vec<Vec<i64>>,
    pub expected: Vec<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmittedSource {
    pub model: ModelSource,
    pub harness: Harness,
}

fn check_c_format(fmt: &FixedPointFormat, what: &str) -> Result<()> {
    if fmt.min_code() < i32::MIN as i64 || fmt.max_code() > i32::MAX as i64 {
        return Err(Error::Unsupported(format!(
            "{what} format {fmt} does not fit int32_t codes"
        )));
    }
    Ok(())
}

fn model_hash(model: &QuantizedModel) -> Result<String> {
    let json = model.to_json()?;
    Ok(format!("{:x}", Sha256::digest(json.as_bytes())))
}

fn lit(v: i64) -> String {
    if v == i32::MIN as i64 {
        "(-2147483647 - 1)".into()
    } else {
        v.to_string()
    }
}

fn lit64(v: i64) -> String {
    if v == i64::MIN {
        "(-INT64_C(9223372036854775807) - 1)".into()
    } else {
        format!("INT64_C({v})")
    }
}

fn push_table(out: &mut String, name: &str, values: &[i64]) {
    let _ = writeln!(out, "static const int32_t {name}[{}] = {{", values.len());
    for chunk in values.chunks(12) {
        let row: Vec<String> = chunk.iter().map(|&v| lit(v)).collect();
        let _ = writeln!(out, "    {},", row.join(", "));
    }
    out.push_str("};\n\n");
}

const RUNTIME: &str = r#"typedef struct {
    int32_t in_dim;
    int32_t out_dim;
    const int32_t *weights;
    const int32_t *biases;
    int64_t bias_scale;
    int32_t acc_frac;
    int32_t out_frac;
    int32_t activation;
    int32_t half_even;
    int32_t wrap;
    int32_t bits;
    int32_t is_signed;
    int64_t min_code;
    int64_t max_code;
    const int32_t *table;
    int64_t table_offset;
} layer_t;

static int64_t pow2(int32_t k)
{
    return (int64_t)((uint64_t)1 << k);
}

/* floor(v / 2^k) without shifting negative values */
static int64_t floor_shift(int64_t v, int32_t k)
{
    int64_t d = pow2(k);
    int64_t q = v / d;
    if (v % d != 0 && v < 0) {
        q -= 1;
    }
    return q;
}

static int64_t wrap_code(uint64_t v, const layer_t *l)
{
    uint64_t mask = ((uint64_t)1 << l->bits) - 1u;
    uint64_t b = v & mask;
    if (l->is_signed && b >= ((uint64_t)1 << (l->bits - 1))) {
        return (int64_t)b - pow2(l->bits);
    }
    return (int64_t)b;
}

static int64_t requantize(int64_t acc, const layer_t *l)
{
    int32_t shift = l->acc_frac - l->out_frac;
    int64_t v;
    if (shift > 0) {
        v = floor_shift(acc, shift);
        if (l->half_even) {
            int64_t rem = acc - v * pow2(shift);
            int64_t half = pow2(shift - 1);
            if (rem > half || (rem == half && v % 2 != 0)) {
                v += 1;
            }
        }
    } else if (shift < 0) {
        int64_t m = pow2(-shift);
        if (l->wrap) {
            return wrap_code((uint64_t)acc * (uint64_t)m, l);
        }
        if (acc > l->max_code / m) {
            return l->max_code;
        }
        if (acc < l->min_code / m) {
            return l->min_code;
        }
        return acc * m;
    } else {
        v = acc;
    }
    if (l->wrap) {
        return wrap_code((uint64_t)v, l);
    }
    if (v > l->max_code) {
        return l->max_code;
    }
    if (v < l->min_code) {
        return l->min_code;
    }
    return v;
}

static int64_t sigmoid_lookup(int64_t acc, const layer_t *l)
{
    int64_t v = acc + l->table_offset;
    int64_t idx;
    if (l->acc_frac >= 4) {
        idx = floor_shift(v, l->acc_frac - 4);
    } else {
        idx = v * pow2(4 - l->acc_frac);
    }
    if (idx < 0) {
        idx = 0;
    }
    if (idx > 255) {
        idx = 255;
    }
    return l->table[idx];
}

static void dense(const layer_t *l, const int64_t *x, int64_t *y)
{
    int32_t o;
    int32_t i;
    for (o = 0; o < l->out_dim; ++o) {
        const int32_t *row = l->weights + o * l->in_dim;
        int64_t acc = 0;
        for (i = 0; i < l->in_dim; ++i) {
            acc += (int64_t)row[i] * x[i];
        }
        acc += (int64_t)l->biases[o] * l->bias_scale;
        if (l->activation == 2) {
            y[o] = sigmoid_lookup(acc, l);
        } else {
            if (l->activation == 1 && acc < 0) {
                acc = 0;
            }
            y[o] = requantize(acc, l);
        }
    }
}

"#;

/// Emit `model.h` and `model.c` for the layers in `scope`. The stored codes
/// are used as they are; nothing is re-quantized.
pub fn emit_model_source(model: &QuantizedModel, scope: FaultScope) -> Result<ModelSource> {
    let spec = model.spec();
    let n_layers = scope.layers(spec);
    check_c_format(&spec.input_format, "input")?;
    let mut layers = Vec::with_capacity(n_layers);
    let mut tables = String::new();
    let mut descs = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let layer = &spec.layers[l];
        check_c_format(&layer.weight_format, &format!("layer {l} weight"))?;
        check_c_format(&layer.bias_format, &format!("layer {l} bias"))?;
        check_c_format(&layer.activation_format, &format!("layer {l} activation"))?;
        let codes = model.layer_codes(l);
        let acc_frac = layer.weight_format.frac_bits() + spec.layer_input_format(l).frac_bits();
        let bias_shift = acc_frac - layer.bias_format.frac_bits();
        push_table(&mut tables, &format!("L{l}_W"), &codes.weights);
        push_table(&mut tables, &format!("L{l}_B"), &codes.biases);
        let (act, table, offset) = match layer.activation {
            Activation::Linear => (0, "0".to_string(), 0i64),
            Activation::Relu => (1, "0".to_string(), 0),
            Activation::Sigmoid => {
                let t = layer.sigmoid_table.as_ref().ok_or_else(|| {
                    Error::Unsupported(format!("layer {l}: sigmoid without a lookup table"))
                })?;
                if t.len() != SIGMOID_TABLE_SIZE {
                    return Err(Error::Unsupported(format!(
                        "layer {l}: sigmoid table has {} entries",
                        t.len()
                    )));
                }
                push_table(&mut tables, &format!("L{l}_T"), t);
                (2, format!("L{l}_T"), 8i64 << acc_frac)
            }
        };
        let fmt = &layer.activation_format;
        descs.push(format!(
            "    {{{}, {}, L{l}_W, L{l}_B, {}, {acc_frac}, {}, {act}, {}, {}, {}, {}, {}, {}, {table}, {}}}",
            layer.in_dim,
            layer.out_dim,
            lit64(1i64 << bias_shift),
            fmt.frac_bits(),
            (fmt.rounding() == Rounding::HalfEven) as i32,
            (fmt.overflow() == Overflow::Wrap) as i32,
            fmt.total_bits(),
            fmt.is_signed() as i32,
            lit64(fmt.min_code()),
            lit64(fmt.max_code()),
            lit64(offset),
        ));
        layers.push(LayerManifest {
            in_dim: layer.in_dim,
            out_dim: layer.out_dim,
            activation: layer.activation,
            weight_format: layer.weight_format.to_string(),
            bias_format: layer.bias_format.to_string(),
            activation_format: fmt.to_string(),
        });
    }
    let in_dim = spec.input_dim();
    let out_dim = spec.layers[n_layers - 1].out_dim;
    let width = spec.layers[..n_layers]
        .iter()
        .map(|l| l.out_dim)
        .chain(std::iter::once(in_dim))
        .max()
        .unwrap_or(1);
    let hash = model_hash(model)?;

    let header = format!(
        "#ifndef EDGEREL_MODEL_H\n#define EDGEREL_MODEL_H\n\n#include <stdint.h>\n\n\
         /* model sha256 {hash} */\n\
         #define EDGEREL_IN_DIM {in_dim}\n#define EDGEREL_OUT_DIM {out_dim}\n\n\
         /* Input codes in {}; writes EDGEREL_OUT_DIM output codes. Reentrant. */\n\
         void {FUNCTION_NAME}(const int32_t *in, int32_t *out);\n\n#endif\n",
        spec.input_format
    );

    let mut source = format!("#include \"{HEADER_NAME}\"\n\n#define WIDTH {width}\n\n");
    source.push_str(RUNTIME);
    source.push_str(&tables);
    let _ = writeln!(source, "static const layer_t LAYERS[{n_layers}] = {{");
    source.push_str(&descs.join(",\n"));
    source.push_str("\n};\n\n");
    let _ = write!(
        source,
        "void {FUNCTION_NAME}(const int32_t *in, int32_t *out)\n{{\n\
         \x20   int64_t a[WIDTH];\n    int64_t b[WIDTH];\n    int64_t *x = a;\n    int64_t *y = b;\n\
         \x20   int32_t i;\n\
         \x20   for (i = 0; i < EDGEREL_IN_DIM; ++i) {{\n        a[i] = in[i];\n    }}\n\
         \x20   for (i = 0; i < {n_layers}; ++i) {{\n        int64_t *t;\n        dense(&LAYERS[i], x, y);\n\
         \x20       t = x;\n        x = y;\n        y = t;\n    }}\n\
         \x20   for (i = 0; i < EDGEREL_OUT_DIM; ++i) {{\n        out[i] = (int32_t)x[i];\n    }}\n}}\n"
    );

    Ok(ModelSource {
        header,
        source,
        manifest: Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            model_sha256: hash,
            scope,
            input_dim: in_dim,
            output_dim: out_dim,
            input_format: spec.input_format.to_string(),
            layers,
            vector_count: 0,
        },
    })
}

/// `n` input-code vectors drawn uniformly over the input format's code range,
/// with the interpreter's output codes.
pub fn emit_test_harness(
    model: &QuantizedModel,
    scope: FaultScope,
    n: usize,
    seed: u64,
) -> Result<Harness> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "harness needs at least one vector".into(),
        ));
    }
    let spec = model.spec();
    let n_layers = scope.layers(spec);
    let fmt = spec.input_format;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n);
    let mut expected = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<i64> = (0..spec.input_dim())
            .map(|_| rng.gen_range(fmt.min_code()..=fmt.max_code()))
            .collect();
        let outs = model.forward_codes_layers(&x, n_layers)?;
        expected.push(outs.last().cloned().unwrap_or_default());
        inputs.push(x);
    }
    Ok(Harness { inputs, expected })
}

fn push_matrix(out: &mut String, name: &str, rows: &[Vec<i64>]) {
    let width = rows.first().map_or(0, Vec::len);
    let _ = writeln!(
        out,
        "static const int32_t {name}[{}][{width}] = {{",
        rows.len()
    );
    for r in rows {
        let vals: Vec<String> = r.iter().map(|&v| lit(v)).collect();
        let _ = writeln!(out, "    {{{}}},", vals.join(", "));
    }
    out.push_str("};\n\n");
}

impl Harness {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// `harness.c`: runs every vector and exits nonzero at the first mismatch.
    pub fn source(&self) -> String {
        let mut s = format!(
            "#include <stdio.h>\n#include \"{HEADER_NAME}\"\n\n#define N_VECTORS {}\n\n",
            self.len()
        );
        push_matrix(&mut s, "INPUTS", &self.inputs);
        push_matrix(&mut s, "EXPECTED", &self.expected);
        s.push_str(
            "int main(void)\n{\n    int32_t out[EDGEREL_OUT_DIM];\n    long v;\n    int i;\n\
             \x20   for (v = 0; v < N_VECTORS; ++v) {\n\
             \x20       ",
        );
        let _ = writeln!(s, "{FUNCTION_NAME}(INPUTS[v], out);");
        s.push_str(
            "        for (i = 0; i < EDGEREL_OUT_DIM; ++i) {\n\
             \x20           if (out[i] != EXPECTED[v][i]) {\n\
             \x20               printf(\"mismatch vector %ld index %d got %ld want %ld\\n\", v, i, (long)out[i], (long)EXPECTED[v][i]);\n\
             \x20               return 1;\n\
             \x20           }\n\
             \x20       }\n\
             \x20   }\n\
             \x20   printf(\"ok %d vectors\\n\", N_VECTORS);\n\
             \x20   return 0;\n}\n",
        );
        s
    }
}

/// Model source plus a harness of `n` vectors.
pub fn emit(
    model: &QuantizedModel,
    scope: FaultScope,
    n: usize,
    seed: u64,
) -> Result<EmittedSource> {
    let mut m = emit_model_source(model, scope)?;
    let harness = emit_test_harness(model, scope, n, seed)?;
    m.manifest.vector_count = harness.len();
    Ok(EmittedSource { model: m, harness })
}

impl EmittedSource {
    /// Write the three C files and `manifest.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            (HEADER_NAME, self.model.header.clone()),
            (SOURCE_NAME, self.model.source.clone()),
            (HARNESS_NAME, self.harness.source()),
            (
                "manifest.json",
                serde_json::to_string_pretty(&self.model.manifest)? + "\n",
            ),
        ];
        let mut out = Vec::with_capacity(files.len());
        for (name, text) in files {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            out.push(p);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub compile_command: Vec<String>,
    pub exit_code: Option<i32>,
    pub stdout: String,
}

/// Compiler command from the environment, falling back to `cc`.
pub fn compiler_from_env() -> String {
    std::env::var(COMPILER_ENV)
        .ok()
        .filter(|s| !s.trim().is_empty())
        .unwrap_or_else(|| DEFAULT_COMPILER.to_string())
}

/// Compile the emitted files alone in a fresh directory with strict flags and
/// run the harness. Compiler failures (including warnings) are errors; a
/// harness mismatch is reported with `passed = false`.
pub fn verify(emitted: &EmittedSource, compiler: &str) -> Result<VerifyReport> {
    let dir = tempfile::tempdir().map_err(|e| Error::io(Path::new("tempdir"), e))?;
    let files = [
        (HEADER_NAME, emitted.model.header.clone()),
        (SOURCE_NAME, emitted.model.source.clone()),
        (HARNESS_NAME, emitted.harness.source()),
    ];
    for (name, text) in files {
        let p = dir.path().join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    let mut words = compiler.split_whitespace();
    let program = words
        .next()
        .ok_or_else(|| Error::Toolchain("empty compiler command".into()))?;
    let exe = dir.path().join("harness");
    let mut args: Vec<String> = words.map(str::to_string).collect();
    args.extend(STRICT_FLAGS.iter().map(|s| s.to_string()));
    // Relative names keep the recorded command free of the temporary path.
    args.extend([
        "-o".to_string(),
        "harness".to_string(),
        SOURCE_NAME.to_string(),
        HARNESS_NAME.to_string(),
    ]);
    let compile = Command::new(program)
        .args(&args)
        .current_dir(dir.path())
        .output()
        .map_err(|e| Error::Toolchain(format!("cannot run {program}: {e}")))?;
    let mut command = vec![program.to_string()];
    command.extend(args);
    if !compile.status.success() {
        return Err(Error::Toolchain(format!(
            "{} failed:\n{}",
            command.join(" "),
            String::from_utf8_lossy(&compile.stderr)
        )));
    }
    let run = Command::new(&exe)
        .current_dir(dir.path())
        .output()
        .map_err(|e| Error::Toolchain(format!("cannot run harness: {e}")))?;
    Ok(VerifyReport {
        passed: run.status.success(),
        compile_command: command,
        exit_code: run.status.code(),
        stdout: String::from_utf8_lossy(&run.stdout).into_owned(),
    })
}
