//! Block addresses, binary encoding of a history window, and turning a
//! predicted in-page index back into a full address.

use transformap::address::{encode_binary, flatten_history, reconstruct_address, to_block_address, AddressConfig};

fn main() -> transformap::Result<()> {
    let config = AddressConfig::new(24, 12, 6)?;
    println!(
        "{} block-index bits, {} page-number bits, {} blocks per page",
        config.block_index_bits(),
        config.page_number_bits(),
        config.blocks_per_page()
    );

    let addr = 0x12_3456;
    let block = to_block_address(addr, &config);
    let bits = encode_binary(block, &config)?;
    println!("{addr:#x} -> block {block:#x} -> {:?}", bits.bits());
    assert_eq!(bits.decode(), block);

    // Fewer blocks than the history length: the oldest one is repeated in front.
    let history = [block, block + 1, block + 5];
    let input = flatten_history(&history, 8, &config);
    println!("history of {} blocks -> {} input bits", history.len(), input.len());

    for idx in [0, 7, 63] {
        let target = reconstruct_address(addr, idx, &config)?;
        println!("index {idx:>2} in the page of {addr:#x} is {target:#x}");
    }
    Ok(())
}
