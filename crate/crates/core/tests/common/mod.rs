use spamshield::corpus::{CorpusSpec, SpamClass};

/// Which layers a corpus run has switched on.
pub struct Layers<'a> {
    pub zones: &'a [&'a str],
    pub surbl: bool,
    pub other_filters: bool,
}

/// Whether a spam class survives the given layers, reasoned from the class
/// definition alone.
pub fn class_delivered(c: &SpamClass, layers: &Layers) -> bool {
    let listed = c.zones.iter().any(|z| layers.zones.contains(&z.as_str()));
    let bad_attachment = c.attachment.as_deref().is_some_and(|a| {
        let parts: Vec<&str> = a.split('.').collect();
        (parts.len() >= 3 && parts.last() == Some(&"exe")) || c.attachment_size > 100 * 1024
    });
    let caught_elsewhere = layers.other_filters && (!c.ptr || c.forged_local_sender || c.internal_relay || bad_attachment);
    let caught_by_url = layers.surbl && c.listed_url;
    !(listed || caught_elsewhere || caught_by_url)
}

pub fn expected_delivered(spec: &CorpusSpec, layers: &Layers) -> usize {
    spec.classes.iter().filter(|c| class_delivered(c, layers)).map(|c| c.count).sum()
}
