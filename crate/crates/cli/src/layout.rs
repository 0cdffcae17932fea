//! Path templates such as `{device}/{voltage}/{temp}/{pattern}_{repeat}.txt`
//! mapping raw response files to their measurement metadata.

use regex::Regex;

use dpan::puf_sim::{ChallengePattern, EnvCondition, ResponseMeta};
use dpan::{Error, Result};

const FIELDS: [(&str, &str); 5] = [
    ("device", r"[^/]+?"),
    ("pattern", r"P_FF|P_00|P_55"),
    ("temp", r"-?[0-9]+(?:\.[0-9]+)?"),
    ("voltage", r"[0-9]+(?:\.[0-9]+)?"),
    ("repeat", r"[0-9]+"),
];

#[derive(Debug)]
pub struct Layout {
    re: Regex,
}

impl Layout {
    pub fn parse(template: &str) -> Result<Self> {
        let mut pattern = String::from("^");
        let mut seen = Vec::new();
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            pattern.push_str(&regex::escape(&rest[..open]));
            let close = rest[open..]
                .find('}')
                .map(|c| open + c)
                .ok_or_else(|| Error::Dataset(format!("unclosed placeholder in layout {template:?}")))?;
            let name = &rest[open + 1..close];
            let (_, re) = FIELDS
                .iter()
                .find(|(f, _)| *f == name)
                .ok_or_else(|| Error::Dataset(format!("unknown placeholder {{{name}}} in layout")))?;
            if seen.contains(&name) {
                return Err(Error::Dataset(format!("placeholder {{{name}}} repeated in layout")));
            }
            seen.push(name);
            pattern.push_str(&format!("(?P<{name}>{re})"));
            rest = &rest[close + 1..];
        }
        pattern.push_str(&regex::escape(rest));
        pattern.push('$');
        for (f, _) in FIELDS {
            if !seen.contains(&f) {
                return Err(Error::Dataset(format!("layout lacks {{{f}}}")));
            }
        }
        let re = Regex::new(&pattern).map_err(|e| Error::Dataset(format!("layout: {e}")))?;
        Ok(Self { re })
    }

    /// Metadata for a `/`-separated path relative to the input root, or
    /// `None` when the path does not fit the template.
    pub fn match_path(&self, rel: &str) -> Result<Option<ResponseMeta>> {
        let Some(caps) = self.re.captures(rel) else {
            return Ok(None);
        };
        let num = |f: &str| -> Result<f64> {
            caps[f].parse().map_err(|_| Error::Dataset(format!("{rel}: bad {f} {:?}", &caps[f])))
        };
        let pattern = ChallengePattern::parse(&caps["pattern"]).expect("constrained by the regex");
        let env = EnvCondition::new(num("temp")?, num("voltage")?)
            .map_err(|e| Error::Dataset(format!("{rel}: {e}")))?;
        let repeat = caps["repeat"].parse().map_err(|_| Error::Dataset(format!("{rel}: bad repeat")))?;
        Ok(Some(ResponseMeta { device_id: caps["device"].to_string(), pattern, env, repeat }))
    }
}
