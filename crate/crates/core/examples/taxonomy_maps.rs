//! Prints both event-to-characteristic maps and projects a few strong
//! labels onto the four high-level classes.

use mtlsed::taxonomy::{project_labels, proposed_map, randomized_map, AccClass, EventClass, EventLabel};

fn main() -> mtlsed::Result<()> {
    for map in [proposed_map(), randomized_map()] {
        println!("{}:", map.name);
        for acc in AccClass::ALL {
            let members: Vec<&str> = map.preimage(acc).into_iter().map(EventClass::as_str).collect();
            println!("  {} <- {}", acc.as_str(), members.join(", "));
        }
    }

    let labels = vec![
        EventLabel::new("clip", EventClass::Blender, 0.0, 4.0)?,
        EventLabel::new("clip", EventClass::Frying, 3.5, 9.0)?,
        EventLabel::new("clip", EventClass::Dog, 5.0, 5.6)?,
    ];
    println!("\nproposed projection (overlapping A events merge):");
    for l in project_labels(&labels, &proposed_map()) {
        println!("  {l:?}");
    }
    Ok(())
}
