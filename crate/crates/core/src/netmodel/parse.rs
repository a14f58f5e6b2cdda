//! Reader for MATPOWER version-2 `mpc` case scripts.
//!
//! Only the `baseMVA`, `bus`, `gen`, `branch` and `gencost` fields are read;
//! any other `mpc.*` assignment is ignored.

use std::collections::HashMap;

use super::{BranchRecord, BusKind, BusRecord, GenRecord, NetworkCase, PolyCost};
use crate::error::{Error, Result};

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;
const GENCOST_MIN_COLS: usize = 4;

/// Angle limits at or beyond this magnitude (degrees) mean "unconstrained".
const ANGLE_FREE_DEG: f64 = 360.0;

struct Matrix {
    rows: Vec<Vec<f64>>,
    /// 1-based source line of each row.
    lines: Vec<usize>,
}

fn strip_comment(line: &str) -> &str {
    // '%' never appears inside numeric data; quoted strings only occur in
    // fields we do not read.
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_number(tok: &str, line: usize) -> Result<f64> {
    match tok {
        "Inf" | "inf" | "+Inf" => Ok(f64::INFINITY),
        "-Inf" | "-inf" => Ok(f64::NEG_INFINITY),
        "NaN" | "nan" => Ok(f64::NAN),
        _ => tok.parse::<f64>().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid number `{tok}`"),
        }),
    }
}

/// Pull every `mpc.<name> = [...]` matrix and `mpc.<name> = scalar;` out of
/// the comment-stripped script.
fn scan(text: &str) -> Result<(HashMap<String, Matrix>, HashMap<String, f64>)> {
    let mut matrices = HashMap::new();
    let mut scalars = HashMap::new();
    let mut current: Option<(String, Matrix, Vec<f64>)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let mut line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if current.is_none() {
            let Some(rest) = line.strip_prefix("mpc.") else {
                continue;
            };
            let Some(eq) = rest.find('=') else {
                continue;
            };
            let name = rest[..eq].trim().to_string();
            let rhs = rest[eq + 1..].trim();
            if let Some(body) = rhs.strip_prefix('[') {
                current = Some((
                    name,
                    Matrix {
                        rows: Vec::new(),
                        lines: Vec::new(),
                    },
                    Vec::new(),
                ));
                line = body;
            } else {
                let value = rhs.trim_end_matches(';').trim();
                if let Ok(v) = value.parse::<f64>() {
                    scalars.insert(name, v);
                }
                continue;
            }
        }

        let (_, matrix, pending) = current.as_mut().expect("inside a matrix");
        let (body, closed) = match line.find(']') {
            Some(i) => (&line[..i], true),
            None => (line, false),
        };
        // Rows end at ';' or at the end of a physical line.
        for (k, chunk) in body.split(';').enumerate() {
            if k > 0 && !pending.is_empty() {
                matrix.rows.push(std::mem::take(pending));
                matrix.lines.push(lineno);
            }
            for tok in chunk.split(|c: char| c.is_whitespace() || c == ',') {
                if !tok.is_empty() {
                    pending.push(parse_number(tok, lineno)?);
                }
            }
        }
        if !pending.is_empty() {
            matrix.rows.push(std::mem::take(pending));
            matrix.lines.push(lineno);
        }
        if closed {
            let (name, matrix, _) = current.take().expect("inside a matrix");
            matrices.insert(name, matrix);
        }
    }
    if let Some((name, ..)) = current {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: format!("unterminated matrix `{name}`"),
        });
    }
    Ok((matrices, scalars))
}

fn take_matrix(
    matrices: &mut HashMap<String, Matrix>,
    name: &'static str,
    min_cols: usize,
) -> Result<Matrix> {
    let m = matrices.remove(name).ok_or(Error::MissingMatrix(name))?;
    if m.rows.is_empty() {
        return Err(Error::MissingMatrix(name));
    }
    let width = m.rows[0].len();
    for (k, row) in m.rows.iter().enumerate() {
        if row.len() < min_cols || row.len() != width {
            return Err(Error::MalformedRow {
                matrix: name,
                row: k,
                expected: min_cols.max(width),
                found: row.len(),
            });
        }
    }
    Ok(m)
}

fn case_name(text: &str) -> String {
    text.lines()
        .map(|l| strip_comment(l).trim())
        .find_map(|l| {
            let rest = l.strip_prefix("function")?;
            let (_, name) = rest.split_once('=')?;
            Some(name.trim().trim_end_matches(';').to_string())
        })
        .unwrap_or_else(|| "case".to_string())
}

fn angle_limit(deg: f64) -> Option<f64> {
    (deg.is_finite() && deg.abs() < ANGLE_FREE_DEG).then(|| deg.to_radians())
}

/// Parse a MATPOWER case script into a per-unit [`NetworkCase`].
///
/// Out-of-service rows are kept with `in_service = false`; call
/// [`NetworkCase::prepared`] before building a formulation.
pub fn parse_matpower_case(text: &str) -> Result<NetworkCase> {
    let (mut matrices, scalars) = scan(text)?;
    let base_mva = *scalars
        .get("baseMVA")
        .ok_or(Error::MissingMatrix("baseMVA"))?;
    if !(base_mva > 0.0) {
        return Err(Error::InvalidNetwork(format!("baseMVA = {base_mva}")));
    }

    let bus_m = take_matrix(&mut matrices, "bus", BUS_COLS)?;
    let gen_m = take_matrix(&mut matrices, "gen", GEN_COLS)?;
    let branch_m = take_matrix(&mut matrices, "branch", BRANCH_COLS)?;
    let cost_m = take_matrix(&mut matrices, "gencost", GENCOST_MIN_COLS)?;

    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut buses = Vec::with_capacity(bus_m.rows.len());
    for (k, row) in bus_m.rows.iter().enumerate() {
        let line = bus_m.lines[k];
        let id = row[0];
        if id < 0.0 || id.fract() != 0.0 {
            return Err(Error::Parse {
                line,
                msg: format!("invalid bus number {id}"),
            });
        }
        let id = id as u64;
        if index.insert(id, k).is_some() {
            return Err(Error::DuplicateBus(id));
        }
        let kind = match row[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Ref,
            4 => BusKind::Isolated,
            t => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown bus type {t}"),
                })
            }
        };
        buses.push(BusRecord {
            id,
            kind,
            p_load: row[2] / base_mva,
            q_load: row[3] / base_mva,
            g_shunt: row[4] / base_mva,
            b_shunt: row[5] / base_mva,
            v_init: row[7],
            theta_init: row[8].to_radians(),
            v_max: row[11],
            v_min: row[12],
        });
    }
    let lookup = |id: f64, line: usize| -> Result<usize> {
        index.get(&(id as u64)).copied().ok_or(Error::Parse {
            line,
            msg: format!("reference to unknown bus {id}"),
        })
    };

    if cost_m.rows.len() < gen_m.rows.len() {
        return Err(Error::Parse {
            line: cost_m.lines.last().copied().unwrap_or(0),
            msg: format!(
                "{} gencost rows for {} generators",
                cost_m.rows.len(),
                gen_m.rows.len()
            ),
        });
    }
    let mut gens = Vec::with_capacity(gen_m.rows.len());
    for (k, row) in gen_m.rows.iter().enumerate() {
        let line = gen_m.lines[k];
        let cost = poly_cost(&cost_m.rows[k], k, base_mva)?;
        gens.push(GenRecord {
            bus: lookup(row[0], line)?,
            p_init: row[1] / base_mva,
            q_init: row[2] / base_mva,
            q_max: row[3] / base_mva,
            q_min: row[4] / base_mva,
            in_service: row[7] > 0.0,
            p_max: row[8] / base_mva,
            p_min: row[9] / base_mva,
            cost,
        });
    }

    let mut branches = Vec::with_capacity(branch_m.rows.len());
    for (k, row) in branch_m.rows.iter().enumerate() {
        let line = branch_m.lines[k];
        let tap = if row[8] == 0.0 { 1.0 } else { row[8] };
        let (ang_min, ang_max) = if row.len() >= 13 && !(row[11] == 0.0 && row[12] == 0.0) {
            (angle_limit(row[11]), angle_limit(row[12]))
        } else {
            (None, None)
        };
        branches.push(BranchRecord {
            from: lookup(row[0], line)?,
            to: lookup(row[1], line)?,
            r: row[2],
            x: row[3],
            b_charge: row[4],
            rate_a: (row[5] > 0.0).then(|| row[5] / base_mva),
            tap,
            shift: row[9].to_radians(),
            in_service: row[10] > 0.0,
            ang_min,
            ang_max,
        });
    }

    Ok(NetworkCase {
        name: case_name(text),
        base_mva,
        buses,
        gens,
        branches,
    })
}

fn poly_cost(row: &[f64], k: usize, base_mva: f64) -> Result<PolyCost> {
    let model = row[0] as i64;
    if model == 1 {
        return Err(Error::UnsupportedCost {
            row: k,
            msg: "piecewise-linear cost (model 1)".into(),
        });
    }
    if model != 2 {
        return Err(Error::UnsupportedCost {
            row: k,
            msg: format!("cost model {model}"),
        });
    }
    let n = row[3] as usize;
    if row.len() < GENCOST_MIN_COLS + n {
        return Err(Error::MalformedRow {
            matrix: "gencost",
            row: k,
            expected: GENCOST_MIN_COLS + n,
            found: row.len(),
        });
    }
    if n > 3 {
        return Err(Error::UnsupportedCost {
            row: k,
            msg: format!("polynomial of degree {}", n - 1),
        });
    }
    // Coefficients run from the highest order down to the constant.
    let coeffs = &row[GENCOST_MIN_COLS..GENCOST_MIN_COLS + n];
    let mut c = [0.0; 3];
    for (power, &v) in coeffs.iter().rev().enumerate() {
        c[power] = v;
    }
    Ok(PolyCost {
        c2: c[2] * base_mva * base_mva,
        c1: c[1] * base_mva,
        c0: c[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"
function mpc = tiny
mpc.version = '2';
mpc.baseMVA = 100;
%% bus data
mpc.bus = [
	1	3	0	0	0	0	1	1	0	345	1	1.1	0.9;
	2	1	90	30	0	19	1	1	0	345	1	1.1	0.9;
];
mpc.gen = [
	1	72.3	27.03	300	-300	1.04	100	1	250	10;
];
mpc.branch = [
	1	2	0.01	0.1	0.02	0	0	0	0	0	1	-360	360;
];
mpc.gencost = [
	2	1500	0	3	0.11	5	150;
];
"#;

    #[test]
    fn tiny_case_units() {
        let c = parse_matpower_case(TINY).unwrap();
        assert_eq!(c.name, "tiny");
        assert_eq!(c.buses.len(), 2);
        assert!((c.buses[1].p_load - 0.9).abs() < 1e-15);
        assert!((c.buses[1].b_shunt - 0.19).abs() < 1e-15);
        assert_eq!(c.branches[0].rate_a, None);
        assert_eq!(c.branches[0].tap, 1.0);
        assert_eq!(c.branches[0].ang_min, None);
        let cost = c.gens[0].cost;
        assert!((cost.c2 - 1100.0).abs() < 1e-9);
        assert!((cost.c1 - 500.0).abs() < 1e-12);
        assert_eq!(cost.c0, 150.0);
        // 0.723 pu = 72.3 MW costs the same in both unit systems
        let mw = 72.3;
        let direct = 0.11 * mw * mw + 5.0 * mw + 150.0;
        assert!((cost.value(0.723) - direct).abs() < 1e-9);
    }

    #[test]
    fn empty_gen_matrix_is_missing() {
        let text = TINY.replace("\t1\t72.3\t27.03\t300\t-300\t1.04\t100\t1\t250\t10;\n", "");
        let err = parse_matpower_case(&text).unwrap_err();
        assert!(matches!(err, Error::MissingMatrix("gen")), "{err}");
        assert!(err.to_string().contains("missing required matrix"));
    }

    #[test]
    fn short_row_rejected() {
        let text = TINY.replace("1\t2\t0.01\t0.1\t0.02\t0\t0\t0\t0\t0\t1\t-360\t360;", "1\t2\t0.01;");
        assert!(matches!(
            parse_matpower_case(&text).unwrap_err(),
            Error::MalformedRow { matrix: "branch", .. }
        ));
    }

    #[test]
    fn piecewise_cost_rejected() {
        let text = TINY.replace("2\t1500\t0\t3\t0.11\t5\t150;", "1\t0\t0\t2\t0\t0\t100\t2000;");
        assert!(matches!(
            parse_matpower_case(&text).unwrap_err(),
            Error::UnsupportedCost { .. }
        ));
    }

    #[test]
    fn duplicate_bus_rejected() {
        let text = TINY.replace("\t2\t1\t90", "\t1\t1\t90");
        assert!(matches!(
            parse_matpower_case(&text).unwrap_err(),
            Error::DuplicateBus(1)
        ));
    }

    #[test]
    fn finite_angle_limits_and_shift() {
        let text = TINY.replace(
            "0\t0\t1\t-360\t360;",
            "1.05\t-3\t1\t-30\t30;",
        );
        let c = parse_matpower_case(&text).unwrap();
        let br = &c.branches[0];
        assert_eq!(br.tap, 1.05);
        assert!((br.shift + 3f64.to_radians()).abs() < 1e-15);
        assert!((br.ang_min.unwrap() + 30f64.to_radians()).abs() < 1e-15);
        assert!((br.ang_max.unwrap() - 30f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn zero_angle_pair_is_free() {
        let text = TINY.replace("1\t-360\t360;", "1\t0\t0;");
        let c = parse_matpower_case(&text).unwrap();
        assert!(!c.branches[0].has_angle_limits());
    }

    #[test]
    fn rows_split_on_semicolons_and_commas() {
        let text = TINY.replace(
            "mpc.gencost = [\n\t2\t1500\t0\t3\t0.11\t5\t150;\n];",
            "mpc.gencost = [2, 1500, 0, 3, 0.11, 5, 150];",
        );
        let c = parse_matpower_case(&text).unwrap();
        assert_eq!(c.gens.len(), 1);
    }
}
