//! Line-oriented text formats for meshes, fields, data sets and run results.
//!
//! Floats are written in shortest round-trip form (`{:?}`), so reading a file
//! back reproduces the written values bit for bit.

use std::fmt::Display;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{MreitError, Result};
use crate::fem::{NodalField, TriField, TriVec2};
use crate::forward::Drive;
use crate::harmonic_bz::ReconstructionResult;
use crate::mesh::{BoundaryEdge, BoundaryTag, Mesh};
use crate::rbz::RbzResult;
use crate::reduced_basis::{ReducedContext, ReducedSpace};
use crate::synth::{LaplacianBzData, NoiseInfo};

pub const MESH_HEADER: &str = "mrmesh 1";
pub const FIELD_HEADER: &str = "mrfield 1";
pub const TRIFIELD_HEADER: &str = "mrtrifield 1";
pub const TRIVEC2_HEADER: &str = "mrtrivec2 1";
pub const DATA_HEADER: &str = "mrdata 1";
pub const SPACE_HEADER: &str = "mrspace 1";

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> MreitError + '_ {
    move |source| MreitError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads non-empty lines and reports parse errors with their position.
struct Lines<R> {
    inner: std::io::Lines<R>,
    path: PathBuf,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn new(reader: R, path: &Path) -> Self {
        Lines {
            inner: reader.lines(),
            path: path.to_path_buf(),
            line: 0,
        }
    }

    fn error(&self, message: impl Into<String>) -> MreitError {
        MreitError::Parse {
            path: self.path.clone(),
            line: self.line,
            message: message.into(),
        }
    }

    fn next_line(&mut self) -> Result<String> {
        loop {
            self.line += 1;
            match self.inner.next() {
                None => return Err(self.error("unexpected end of file")),
                Some(Err(source)) => {
                    return Err(MreitError::Io {
                        path: self.path.clone(),
                        source,
                    })
                }
                Some(Ok(l)) if l.trim().is_empty() => continue,
                Some(Ok(l)) => return Ok(l),
            }
        }
    }

    fn expect(&mut self, header: &str) -> Result<()> {
        let l = self.next_line()?;
        if l.trim() != header {
            return Err(self.error(format!("expected `{header}`, found `{}`", l.trim())));
        }
        Ok(())
    }

    /// Parses `keyword <count>`.
    fn count(&mut self, keyword: &str) -> Result<usize> {
        let l = self.next_line()?;
        let mut it = l.split_whitespace();
        if it.next() != Some(keyword) {
            return Err(self.error(format!("expected `{keyword} <count>`")));
        }
        let n = self.parse(it.next())?;
        self.no_more(it)?;
        Ok(n)
    }

    fn parse<T: FromStr>(&self, token: Option<&str>) -> Result<T>
    where
        T::Err: Display,
    {
        let token = token.ok_or_else(|| self.error("missing value"))?;
        token
            .parse()
            .map_err(|e| self.error(format!("invalid value `{token}`: {e}")))
    }

    fn no_more<'a>(&self, mut it: impl Iterator<Item = &'a str>) -> Result<()> {
        match it.next() {
            Some(extra) => Err(self.error(format!("unexpected trailing token `{extra}`"))),
            None => Ok(()),
        }
    }

    /// Parses a line of exactly `N` values.
    fn values<T: FromStr + Copy + Default, const N: usize>(&mut self) -> Result<[T; N]>
    where
        T::Err: Display,
    {
        let l = self.next_line()?;
        let mut it = l.split_whitespace();
        let mut out = [T::default(); N];
        for v in out.iter_mut() {
            *v = self.parse(it.next())?;
        }
        self.no_more(it)?;
        Ok(out)
    }

    fn finish(&mut self) -> Result<()> {
        for l in self.inner.by_ref() {
            self.line += 1;
            let l = l.map_err(io_err(&self.path))?;
            if !l.trim().is_empty() {
                return Err(self.error("unexpected content after the last record"));
            }
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(io_err(path))?))
}

/// Writes via `f` into a buffered file at `path`.
pub fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn write_mesh_to(w: &mut dyn Write, mesh: &Mesh) -> std::io::Result<()> {
    writeln!(w, "{MESH_HEADER}")?;
    writeln!(w, "nodes {}", mesh.num_nodes())?;
    for [x, y] in mesh.nodes() {
        writeln!(w, "{x:?} {y:?}")?;
    }
    writeln!(w, "triangles {}", mesh.num_triangles())?;
    for [i, j, k] in mesh.triangles() {
        writeln!(w, "{i} {j} {k}")?;
    }
    writeln!(w, "boundary {}", mesh.boundary().len())?;
    for e in mesh.boundary() {
        writeln!(w, "{} {} {}", e.nodes[0], e.nodes[1], e.tag)?;
    }
    Ok(())
}

pub fn read_mesh_from(reader: impl BufRead, path: &Path) -> Result<Mesh> {
    let mut r = Lines::new(reader, path);
    r.expect(MESH_HEADER)?;
    let n = r.count("nodes")?;
    let nodes = (0..n).map(|_| r.values::<f64, 2>()).collect::<Result<Vec<_>>>()?;
    let nt = r.count("triangles")?;
    let triangles = (0..nt).map(|_| r.values::<usize, 3>()).collect::<Result<Vec<_>>>()?;
    let nb = r.count("boundary")?;
    let mut boundary = Vec::with_capacity(nb);
    for _ in 0..nb {
        let l = r.next_line()?;
        let mut it = l.split_whitespace();
        let a = r.parse(it.next())?;
        let b = r.parse(it.next())?;
        let tag: BoundaryTag = it
            .next()
            .ok_or_else(|| r.error("missing boundary tag"))?
            .parse()
            .map_err(|e: String| r.error(e))?;
        r.no_more(it)?;
        boundary.push(BoundaryEdge { nodes: [a, b], tag });
    }
    r.finish()?;
    let line = r.line;
    Mesh::from_parts(nodes, triangles, boundary).map_err(|e| MreitError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("invalid mesh: {e}"),
    })
}

pub fn write_mesh(path: &Path, mesh: &Mesh) -> Result<()> {
    write_file(path, |w| write_mesh_to(w, mesh))
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    read_mesh_from(open(path)?, path)
}

fn write_scalars(w: &mut dyn Write, header: &str, values: &[f64]) -> std::io::Result<()> {
    writeln!(w, "{header}")?;
    writeln!(w, "len {}", values.len())?;
    for v in values {
        writeln!(w, "{v:?}")?;
    }
    Ok(())
}

fn read_scalars(reader: impl BufRead, path: &Path, header: &str) -> Result<Vec<f64>> {
    let mut r = Lines::new(reader, path);
    r.expect(header)?;
    let n = r.count("len")?;
    let values = (0..n)
        .map(|_| r.values::<f64, 1>().map(|[v]| v))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(values)
}

pub fn write_field_to(w: &mut dyn Write, field: &NodalField) -> std::io::Result<()> {
    write_scalars(w, FIELD_HEADER, field)
}

pub fn read_field_from(reader: impl BufRead, path: &Path) -> Result<NodalField> {
    read_scalars(reader, path, FIELD_HEADER).map(NodalField)
}

pub fn write_field(path: &Path, field: &NodalField) -> Result<()> {
    write_file(path, |w| write_field_to(w, field))
}

pub fn read_field(path: &Path) -> Result<NodalField> {
    read_field_from(open(path)?, path)
}

pub fn write_trifield(path: &Path, field: &TriField) -> Result<()> {
    write_file(path, |w| write_scalars(w, TRIFIELD_HEADER, field))
}

pub fn read_trifield(path: &Path) -> Result<TriField> {
    read_scalars(open(path)?, path, TRIFIELD_HEADER).map(TriField)
}

pub fn write_trivec2_to(w: &mut dyn Write, field: &TriVec2) -> std::io::Result<()> {
    writeln!(w, "{TRIVEC2_HEADER}")?;
    writeln!(w, "len {}", field.len())?;
    for [a, b] in field.iter() {
        writeln!(w, "{a:?} {b:?}")?;
    }
    Ok(())
}

pub fn read_trivec2_from(reader: impl BufRead, path: &Path) -> Result<TriVec2> {
    let mut r = Lines::new(reader, path);
    r.expect(TRIVEC2_HEADER)?;
    let n = r.count("len")?;
    let values = (0..n).map(|_| r.values::<f64, 2>()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(TriVec2(values))
}

pub fn write_trivec2(path: &Path, field: &TriVec2) -> Result<()> {
    write_file(path, |w| write_trivec2_to(w, field))
}

pub fn read_trivec2(path: &Path) -> Result<TriVec2> {
    read_trivec2_from(open(path)?, path)
}

pub fn write_data_to(w: &mut dyn Write, data: &LaplacianBzData) -> std::io::Result<()> {
    writeln!(w, "{DATA_HEADER}")?;
    writeln!(w, "triangles {}", data.num_triangles())?;
    match data.noise {
        Some(NoiseInfo { level, seed }) => writeln!(w, "noise {level:?} {seed}")?,
        None => writeln!(w, "noise 0 none")?,
    }
    for (a, b) in data.lap1.iter().zip(data.lap2.iter()) {
        writeln!(w, "{a:?} {b:?}")?;
    }
    Ok(())
}

pub fn read_data_from(reader: impl BufRead, path: &Path) -> Result<LaplacianBzData> {
    let mut r = Lines::new(reader, path);
    r.expect(DATA_HEADER)?;
    let n = r.count("triangles")?;
    let l = r.next_line()?;
    let mut it = l.split_whitespace();
    if it.next() != Some("noise") {
        return Err(r.error("expected `noise <level> <seed|none>`"));
    }
    let level: f64 = r.parse(it.next())?;
    let noise = match it.next() {
        Some("none") => None,
        seed => Some(NoiseInfo {
            level,
            seed: r.parse(seed)?,
        }),
    };
    r.no_more(it)?;
    let (mut lap1, mut lap2) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let [a, b] = r.values::<f64, 2>()?;
        lap1.push(a);
        lap2.push(b);
    }
    r.finish()?;
    Ok(LaplacianBzData {
        lap1: TriField(lap1),
        lap2: TriField(lap2),
        noise,
    })
}

pub fn write_data(path: &Path, data: &LaplacianBzData) -> Result<()> {
    write_file(path, |w| write_data_to(w, data))
}

pub fn read_data(path: &Path) -> Result<LaplacianBzData> {
    read_data_from(open(path)?, path)
}

/// Ordered `key=value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues(pub Vec<(String, String)>);

impl KeyValues {
    pub fn push(&mut self, key: &str, value: impl Display) {
        self.0.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write_to(&self, w: &mut dyn Write) -> std::io::Result<()> {
        for (k, v) in &self.0 {
            writeln!(w, "{k}={v}")?;
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, |w| self.write_to(w))
    }

    pub fn read(path: &Path) -> Result<KeyValues> {
        let mut out = KeyValues::default();
        for (i, l) in open(path)?.lines().enumerate() {
            let l = l.map_err(io_err(path))?;
            if l.trim().is_empty() {
                continue;
            }
            let (k, v) = l.split_once('=').ok_or_else(|| MreitError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected `key=value`".into(),
            })?;
            out.push(k.trim(), v.trim());
        }
        Ok(out)
    }
}

/// Key-value manifest of a Harmonic Bz run.
pub fn result_manifest(algorithm: &str, r: &ReconstructionResult) -> KeyValues {
    let mut kv = KeyValues::default();
    kv.push("algorithm", algorithm);
    kv.push("status", r.status.as_str());
    kv.push("iterations", r.iterations);
    kv.push("forward_solves", r.forward_solves);
    kv.push("wall_ms", r.wall_ms);
    kv.push("final_diff", r.final_diff());
    kv.push("assembly_ms", r.times.assembly_ms);
    kv.push("full_solve_ms", r.times.full_solve_ms);
    kv.push("reduced_solve_ms", r.times.reduced_solve_ms);
    kv.push("estimator_ms", r.times.estimator_ms);
    kv.push("vector_field_ms", r.times.vector_field_ms);
    kv.push("poisson_ms", r.times.poisson_ms);
    kv
}

/// Manifest of a reduced-basis run: the plain manifest plus the enrichment counters.
pub fn rbz_manifest(r: &RbzResult) -> KeyValues {
    let mut kv = result_manifest("rbz", &r.result);
    kv.push("basis_updates", r.basis_updates);
    kv.push("full_solves", r.full_solves);
    kv.push("N1", r.dims[0]);
    kv.push("N2", r.dims[1]);
    kv
}

/// Iteration log: `iteration,log_diff,estimate1,estimate2,basis_update`. The estimate
/// columns are empty where no bound was computed.
pub fn write_iterations_csv_to(w: &mut dyn Write, history: &[f64], rbz: Option<&RbzResult>) -> std::io::Result<()> {
    writeln!(w, "iteration,log_diff,estimate1,estimate2,basis_update")?;
    for (i, d) in history.iter().enumerate() {
        let it = i + 1;
        let (e, update) = match rbz {
            Some(r) => (r.estimates.get(i), r.update_iterations.contains(&it)),
            None => (None, false),
        };
        let (e1, e2) = e.map_or((String::new(), String::new()), |e| {
            (format!("{:?}", e[0]), format!("{:?}", e[1]))
        });
        writeln!(w, "{it},{d:?},{e1},{e2},{}", u8::from(update))?;
    }
    Ok(())
}

pub fn write_iterations_csv(path: &Path, history: &[f64], rbz: Option<&RbzResult>) -> Result<()> {
    write_file(path, |w| write_iterations_csv_to(w, history, rbz))
}

/// Writes a reduced space as a manifest plus one field file per lifting and basis
/// field, named after `stem` in the manifest's directory.
pub fn write_space(manifest: &Path, stem: &str, space: &ReducedSpace) -> Result<()> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let lifting = format!("{stem}_lifting.field");
    write_field(&dir.join(&lifting), space.lifting())?;
    let mut names = Vec::new();
    for (i, b) in space.basis().iter().enumerate() {
        let name = format!("{stem}_basis{i}.field");
        write_field(&dir.join(&name), b)?;
        names.push(name);
    }
    write_file(manifest, |w| {
        writeln!(w, "{SPACE_HEADER}")?;
        writeln!(w, "drive {}", space.drive().number())?;
        writeln!(w, "dim {}", space.dim())?;
        writeln!(w, "lifting {lifting}")?;
        for n in &names {
            writeln!(w, "basis {n}")?;
        }
        Ok(())
    })
}

pub fn read_space(manifest: &Path, ctx: &ReducedContext<'_>) -> Result<ReducedSpace> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let mut r = Lines::new(open(manifest)?, manifest);
    r.expect(SPACE_HEADER)?;
    let number: u8 = r.count("drive")?.try_into().unwrap_or(0);
    let drive = Drive::from_number(number).ok_or_else(|| r.error("drive must be 1 or 2"))?;
    let dim = r.count("dim")?;
    let mut file = |keyword: &str| -> Result<PathBuf> {
        let l = r.next_line()?;
        match l.split_whitespace().collect::<Vec<_>>().as_slice() {
            [k, name] if *k == keyword => Ok(dir.join(name)),
            _ => Err(r.error(format!("expected `{keyword} <file>`"))),
        }
    };
    let lifting = read_field(&file("lifting")?)?;
    let basis = (0..dim)
        .map(|_| file("basis").and_then(|p| read_field(&p)))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    ReducedSpace::from_parts(ctx, drive, lifting, basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::standard_mesh;

    fn parse_err<T: std::fmt::Debug>(r: Result<T>) -> (usize, String) {
        match r {
            Err(MreitError::Parse { line, message, .. }) => (line, message),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn field_text_layout() {
        let mut buf = Vec::new();
        write_field_to(&mut buf, &NodalField(vec![1.0, -0.1, 1e-300])).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "mrfield 1\nlen 3\n1.0\n-0.1\n1e-300\n");
    }

    #[test]
    fn noiseless_data_header() {
        let mut buf = Vec::new();
        write_data_to(&mut buf, &LaplacianBzData::zeros(1)).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "mrdata 1\ntriangles 1\nnoise 0 none\n0.0 0.0\n"
        );
    }

    #[test]
    fn mesh_round_trip() {
        let m = standard_mesh(20).unwrap();
        let mut buf = Vec::new();
        write_mesh_to(&mut buf, &m).unwrap();
        let back = read_mesh_from(buf.as_slice(), Path::new("m")).unwrap();
        assert_eq!(back.nodes(), m.nodes());
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.boundary(), m.boundary());
        assert_eq!(back.grid_size(), Some(20));
    }

    #[test]
    fn malformed_inputs() {
        let p = Path::new("x");
        let (line, _) = parse_err(read_field_from("mrfield 2\n".as_bytes(), p));
        assert_eq!(line, 1);
        let (line, msg) = parse_err(read_field_from("mrfield 1\nlen 2\n1\nabc\n".as_bytes(), p));
        assert_eq!(line, 4);
        assert!(msg.contains("abc"));
        let (_, msg) = parse_err(read_field_from("mrfield 1\nlen 2\n1\n".as_bytes(), p));
        assert!(msg.contains("end of file"));
        let (_, msg) = parse_err(read_field_from("mrfield 1\nlen 1\n1\n2\n".as_bytes(), p));
        assert!(msg.contains("after the last record"));
        let (line, _) = parse_err(read_data_from(
            "mrdata 1\ntriangles 1\nnoise 0.1 x\n0 0\n".as_bytes(),
            p,
        ));
        assert_eq!(line, 3);
        let bad_mesh = "mrmesh 1\nnodes 3\n0 0\n1 0\n0 1\ntriangles 1\n0 2 1\nboundary 0\n";
        let (_, msg) = parse_err(read_mesh_from(bad_mesh.as_bytes(), p));
        assert!(msg.contains("invalid mesh"));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_field(Path::new("/nonexistent/dir/f.field")).unwrap_err();
        assert!(matches!(err, MreitError::Io { .. }));
        assert!(err.to_string().contains("/nonexistent/dir/f.field"));
    }
}
