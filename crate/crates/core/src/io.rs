//! CSV readers and writers for instances, observations, ETV matrices and plans.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! file read back yields bit-identical values.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, WriterBuilder};

use crate::error::{Error, Result};
use crate::problem::{AllocationPlan, EtvMatrix, FundType, Instance, Observation, UserRecord};

pub const USERS_FILE: &str = "users.csv";
pub const FUNDS_FILE: &str = "funds.csv";
pub const OBSERVATIONS_FILE: &str = "observations.csv";

fn parse<T: std::str::FromStr>(record: &StringRecord, idx: usize, what: &str) -> Result<T> {
    let raw = record.get(idx).ok_or_else(|| Error::Parse(format!("missing column {idx} ({what}) in {record:?}")))?;
    raw.trim().parse().map_err(|_| Error::Parse(format!("cannot parse {what} from {raw:?}")))
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    ReaderBuilder::new().has_headers(true).from_reader(r)
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn check_header(found: &StringRecord, expected_prefix: &[&str], feature_prefix: char) -> Result<usize> {
    for (i, name) in expected_prefix.iter().enumerate() {
        if found.get(i).map(str::trim) != Some(*name) {
            return Err(Error::Parse(format!("expected column {i} to be {name:?}, header is {found:?}")));
        }
    }
    let n_features = found.len() - expected_prefix.len();
    for (k, name) in found.iter().skip(expected_prefix.len()).enumerate() {
        if name.trim() != format!("{feature_prefix}{k}") {
            return Err(Error::Parse(format!("unexpected feature column {name:?}")));
        }
    }
    Ok(n_features)
}

pub fn read_users<R: Read>(r: R) -> Result<Vec<UserRecord>> {
    let mut rdr = reader(r);
    let d = check_header(rdr.headers()?, &["id", "tolerance"], 'f')?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok(UserRecord {
                id: parse(&rec, 0, "user id")?,
                risk_tolerance: parse(&rec, 1, "tolerance")?,
                features: (0..d).map(|k| parse(&rec, 2 + k, "user feature")).collect::<Result<_>>()?,
            })
        })
        .collect()
}

pub fn write_users<W: Write>(w: W, users: &[UserRecord]) -> Result<()> {
    let mut wtr = writer(w);
    let d = users.first().map_or(0, |u| u.features.len());
    let mut header = vec!["id".to_string(), "tolerance".to_string()];
    header.extend((0..d).map(|k| format!("f{k}")));
    wtr.write_record(&header)?;
    for u in users {
        let mut row = vec![u.id.to_string(), u.risk_tolerance.to_string()];
        row.extend(u.features.iter().map(f64::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_funds<R: Read>(r: R) -> Result<Vec<FundType>> {
    let mut rdr = reader(r);
    let m = check_header(rdr.headers()?, &["id", "risk_level", "demand"], 'g')?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok(FundType {
                id: parse(&rec, 0, "fund id")?,
                risk_level: parse(&rec, 1, "risk level")?,
                demand: parse(&rec, 2, "demand")?,
                features: (0..m).map(|k| parse(&rec, 3 + k, "fund feature")).collect::<Result<_>>()?,
            })
        })
        .collect()
}

pub fn write_funds<W: Write>(w: W, funds: &[FundType]) -> Result<()> {
    let mut wtr = writer(w);
    let m = funds.first().map_or(0, |f| f.features.len());
    let mut header = vec!["id".to_string(), "risk_level".to_string(), "demand".to_string()];
    header.extend((0..m).map(|k| format!("g{k}")));
    wtr.write_record(&header)?;
    for f in funds {
        let mut row = vec![f.id.to_string(), f.risk_level.to_string(), f.demand.to_string()];
        row.extend(f.features.iter().map(f64::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads `users.csv` and `funds.csv` from a directory.
pub fn read_instance(dir: &Path) -> Result<Instance> {
    let users = read_users(File::open(dir.join(USERS_FILE))?)?;
    let funds = read_funds(File::open(dir.join(FUNDS_FILE))?)?;
    Instance::new(users, funds)
}

pub fn write_instance(dir: &Path, instance: &Instance) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_users(BufWriter::new(File::create(dir.join(USERS_FILE))?), instance.users())?;
    write_funds(BufWriter::new(File::create(dir.join(FUNDS_FILE))?), instance.funds())?;
    Ok(())
}

pub fn read_observations<R: Read>(r: R) -> Result<Vec<Observation>> {
    let mut rdr = reader(r);
    check_header(rdr.headers()?, &["user_id", "fund_id", "converted", "amount"], 'x')?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let converted: u8 = parse(&rec, 2, "converted")?;
            if converted > 1 {
                return Err(Error::Parse(format!("converted must be 0 or 1, got {converted}")));
            }
            Observation::new(
                parse(&rec, 0, "user id")?,
                parse(&rec, 1, "fund id")?,
                converted == 1,
                parse(&rec, 3, "amount")?,
            )
        })
        .collect()
}

pub fn write_observations<W: Write>(w: W, observations: &[Observation]) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(["user_id", "fund_id", "converted", "amount"])?;
    for o in observations {
        wtr.write_record([
            o.user.to_string(),
            o.fund.to_string(),
            u8::from(o.converted).to_string(),
            o.amount.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Header row holds fund ids; row `i` holds user `i`'s values.
pub fn read_etv<R: Read>(r: R) -> Result<EtvMatrix> {
    let mut rdr = reader(r);
    let header = rdr.headers()?.clone();
    for (k, name) in header.iter().enumerate() {
        if name.trim() != k.to_string() {
            return Err(Error::Parse(format!("ETV header must list fund ids 0..K, found {name:?} at {k}")));
        }
    }
    let k = header.len();
    let mut values = Vec::new();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != k {
            return Err(Error::Shape(format!("ETV row {n} has {} values, expected {k}", rec.len())));
        }
        for j in 0..k {
            values.push(parse(&rec, j, "ETV value")?);
        }
        n += 1;
    }
    EtvMatrix::new(n, k, values)
}

pub fn write_etv<W: Write>(w: W, etv: &EtvMatrix) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record((0..etv.n_funds()).map(|j| j.to_string()))?;
    for i in 0..etv.n_users() {
        wtr.write_record(etv.row(i).iter().map(f64::to_string))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Two columns `user_id,fund_id`; rows may appear in any order but must cover users 0..N exactly once.
pub fn read_plan<R: Read>(r: R) -> Result<AllocationPlan> {
    let mut rdr = reader(r);
    check_header(rdr.headers()?, &["user_id", "fund_id"], 'x')?;
    let mut pairs = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        pairs.push((parse::<usize>(&rec, 0, "user id")?, parse::<usize>(&rec, 1, "fund id")?));
    }
    let mut assignment = vec![usize::MAX; pairs.len()];
    for (user, fund) in pairs {
        if user >= assignment.len() || assignment[user] != usize::MAX {
            return Err(Error::Shape(format!("plan user id {user} is out of range or repeated")));
        }
        assignment[user] = fund;
    }
    Ok(AllocationPlan::new(assignment))
}

pub fn write_plan<W: Write>(w: W, plan: &AllocationPlan) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(["user_id", "fund_id"])?;
    for (user, fund) in plan.assignment.iter().enumerate() {
        wtr.write_record([user.to_string(), fund.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
