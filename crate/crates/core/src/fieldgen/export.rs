use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::FieldTruth;
use crate::io::{write_atomic, write_layer};
use crate::spectral::GridMap2D;
use crate::Result;

/// GeoJSON-style feature collection: rows as `LineString`, plants as 3-D
/// `Point`s with `species`, `radius` and `id` properties.
pub fn geojson(truth: &FieldTruth) -> Value {
    let mut features = Vec::with_capacity(truth.rows.len() + truth.plants.len());
    for (i, row) in truth.rows.iter().enumerate() {
        if let Some((a, b)) = row.clip(truth.spec.extent) {
            features.push(json!({
                "type": "Feature",
                "geometry": { "type": "LineString", "coordinates": [a, b] },
                "properties": { "kind": "row", "index": i, "theta": row.theta, "offset": row.offset },
            }));
        }
    }
    for p in &truth.plants {
        features.push(json!({
            "type": "Feature",
            "geometry": { "type": "Point", "coordinates": p.stem },
            "properties": {
                "kind": "plant",
                "id": p.id,
                "species": p.species.as_str(),
                "radius": p.radius,
            },
        }));
    }
    json!({
        "type": "FeatureCollection",
        "properties": {
            "extent": truth.spec.extent,
            "row_spacing": truth.spec.row_spacing,
            "crop_lattice": truth.spec.crop_lattice,
            "seed": truth.spec.seed,
        },
        "features": features,
    })
}

pub fn write_geojson(path: &Path, truth: &FieldTruth) -> Result<()> {
    let text = serde_json::to_string_pretty(&geojson(truth)).expect("json values serialize");
    write_atomic(path, text.as_bytes())
}

/// Writes every base layer (and ExG when RGB is present) as PGM + header.
pub fn write_grid(dir: &Path, grid: &GridMap2D) -> Result<Vec<PathBuf>> {
    let mut names: Vec<&str> = grid.base_layer_names().collect();
    if grid.exg().is_some() {
        names.push("exg");
    }
    let mut out = Vec::new();
    for name in names {
        let values = grid.layer(name).expect("listed layer exists");
        out.extend(write_layer(
            dir,
            name,
            grid.origin(),
            grid.cell_size(),
            grid.width(),
            grid.height(),
            values,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldgen::{generate, render_grid, Band, FieldSpec};

    #[test]
    fn geojson_lists_rows_and_plants() {
        let t = generate(&FieldSpec { seed: 2, ..Default::default() }).unwrap();
        let v = geojson(&t);
        let feats = v["features"].as_array().unwrap();
        let rows = feats.iter().filter(|f| f["properties"]["kind"] == "row").count();
        assert_eq!(rows, t.rows.len());
        assert_eq!(feats.len(), t.rows.len() + t.plants.len());
        let first_plant = feats.iter().find(|f| f["properties"]["kind"] == "plant").unwrap();
        assert_eq!(first_plant["geometry"]["type"], "Point");
        assert_eq!(first_plant["properties"]["species"], "crop");
    }

    #[test]
    fn grid_export_writes_pairs() {
        let t = generate(&FieldSpec { seed: 2, ..Default::default() }).unwrap();
        let g = render_grid(&t, 0.05, &[Band::Rgb, Band::Height]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_grid(dir.path(), &g).unwrap();
        assert_eq!(files.len(), 2 * 5);
        let (hdr, exg) = crate::io::read_layer(dir.path(), "exg").unwrap();
        assert_eq!(hdr.width, g.width());
        let q = (hdr.value_max - hdr.value_min) / 65535.0;
        for (a, b) in exg.iter().zip(g.exg().unwrap()) {
            assert!((a - b).abs() <= q);
        }
    }
}
