//! Encode values in a few formats and show rounding, saturation and wrap.
use edgerel::fixedpoint::{FixedPointFormat, Overflow, Rounding};

fn main() -> edgerel::Result<()> {
    let q4 = FixedPointFormat::signed(4, 1)?;
    println!(
        "signed(4,1): step {} range [{}, {}]",
        q4.step(),
        q4.min_value(),
        q4.max_value()
    );
    for x in [-1.3, -0.5, 0.0625, 0.1875, 0.3, 0.9] {
        let c = q4.encode(x)?;
        println!(
            "  {x:>7} -> code {:>3} bits {:04b} value {}",
            c.code(),
            c.bits(),
            c.value()
        );
    }

    let trunc = q4.with_rounding(Rounding::Truncate);
    let wrap = q4.with_overflow(Overflow::Wrap);
    println!("0.3 truncated: {}", trunc.quantize(0.3)?);
    println!(
        "1.3 saturated: {}  wrapped: {}",
        q4.quantize(1.3)?,
        wrap.quantize(1.3)?
    );

    // An accumulator with 10 fractional bits narrowed to the 3 of q4.
    let acc = 0b101_1011_0110;
    println!(
        "requantize({acc}, frac 10) -> code {}",
        q4.requantize(acc, 10)
    );
    Ok(())
}
