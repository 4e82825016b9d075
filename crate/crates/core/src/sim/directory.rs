use std::collections::{BTreeMap, BTreeSet};

use crate::message::EmailAddress;

const DEPARTMENTS: [&str; 19] = [
    "sales", "eng", "hr", "finance", "it", "ops", "legal", "marketing", "support", "research", "admin",
    "facilities", "security", "purchasing", "training", "qa", "projects", "exec", "comms",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub address: EmailAddress,
    pub members: Vec<EmailAddress>,
    /// Positions of `members` in the directory's individual list.
    pub member_ids: Vec<usize>,
}

/// What an address resolves to at RCPT time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolved<'a> {
    Individual(usize),
    Group(&'a Group),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Individual(usize),
    Group(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Directory {
    local_domain: String,
    individuals: Vec<EmailAddress>,
    groups: Vec<Group>,
    index: BTreeMap<String, Slot>,
}

/// Old and new address of every renamed group.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RenameReport {
    pub remap: Vec<(EmailAddress, EmailAddress)>,
}

impl Directory {
    /// `users` mailboxes `user000@domain`, ..., an `allstaff` group holding
    /// everyone and `groups - 1` department groups sharing users round-robin.
    pub fn generate(local_domain: &str, users: usize, groups: usize) -> Self {
        let domain = local_domain.to_ascii_lowercase();
        let individuals: Vec<EmailAddress> = (0..users)
            .map(|i| EmailAddress::new(&format!("user{i:03}"), &domain).expect("generated address"))
            .collect();
        let mut out = Vec::new();
        if groups > 0 {
            out.push(Group {
                address: EmailAddress::new("allstaff", &domain).expect("generated address"),
                members: individuals.clone(),
                member_ids: (0..users).collect(),
            });
        }
        let depts = groups.saturating_sub(1);
        for d in 0..depts {
            let name = match DEPARTMENTS.get(d) {
                Some(n) => format!("all{n}"),
                None => format!("alldept{d:02}"),
            };
            let member_ids: Vec<usize> = (0..users).filter(|i| i % depts == d).collect();
            out.push(Group {
                address: EmailAddress::new(&name, &domain).expect("generated address"),
                members: member_ids.iter().map(|&i| individuals[i].clone()).collect(),
                member_ids,
            });
        }
        let mut d = Self {
            local_domain: domain,
            individuals,
            groups: out,
            index: BTreeMap::new(),
        };
        d.reindex();
        d
    }

    fn reindex(&mut self) {
        self.index.clear();
        for (i, a) in self.individuals.iter().enumerate() {
            self.index.insert(key(a), Slot::Individual(i));
        }
        for (i, g) in self.groups.iter().enumerate() {
            self.index.insert(key(&g.address), Slot::Group(i));
        }
    }

    pub fn local_domain(&self) -> &str {
        &self.local_domain
    }

    pub fn individuals(&self) -> &[EmailAddress] {
        &self.individuals
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn resolve(&self, addr: &EmailAddress) -> Option<Resolved<'_>> {
        match self.index.get(&key(addr))? {
            Slot::Individual(i) => Some(Resolved::Individual(*i)),
            Slot::Group(g) => Some(Resolved::Group(&self.groups[*g])),
        }
    }

    pub fn index_of(&self, addr: &EmailAddress) -> Option<usize> {
        match self.resolve(addr)? {
            Resolved::Individual(i) => Some(i),
            Resolved::Group(_) => None,
        }
    }

    pub fn group_addresses(&self) -> Vec<EmailAddress> {
        self.groups.iter().map(|g| g.address.clone()).collect()
    }

    /// Groups the user belongs to, in directory order.
    pub fn groups_of(&self, user: &EmailAddress) -> Vec<EmailAddress> {
        self.groups
            .iter()
            .filter(|g| g.members.iter().any(|m| m.matches(user)))
            .map(|g| g.address.clone())
            .collect()
    }

    /// Gives every group a fresh local part by inserting `_` after the third
    /// character (`allstaff` becomes `all_staff`). The old names stop resolving.
    pub fn rename_group_ids(&mut self) -> RenameReport {
        let mut taken: BTreeSet<String> = self
            .individuals
            .iter()
            .chain(self.groups.iter().map(|g| &g.address))
            .map(|a| a.local().to_ascii_lowercase())
            .collect();
        let mut report = RenameReport::default();
        for g in &mut self.groups {
            let old = g.address.local().to_string();
            let cut = old.char_indices().nth(3).map_or(old.len(), |(i, _)| i);
            let mut candidate = format!("{}_{}", &old[..cut], &old[cut..]);
            while taken.contains(&candidate.to_ascii_lowercase()) {
                candidate.insert(cut, '_');
            }
            taken.insert(candidate.to_ascii_lowercase());
            let new = EmailAddress::new(&candidate, &self.local_domain).expect("renamed address");
            report.remap.push((g.address.clone(), new.clone()));
            g.address = new;
        }
        self.reindex();
        report
    }
}

fn key(addr: &EmailAddress) -> String {
    format!("{}@{}", addr.local().to_lowercase(), addr.domain())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape() {
        let d = Directory::generate("ABC.com", 200, 20);
        assert_eq!(d.individuals.len(), 200);
        assert_eq!(d.groups.len(), 20);
        assert_eq!(d.groups[0].address.to_string(), "allstaff@abc.com");
        assert_eq!(d.groups[0].members.len(), 200);
        let dept_total: usize = d.groups[1..].iter().map(|g| g.members.len()).sum();
        assert_eq!(dept_total, 200);
        let mut all: Vec<String> = d.individuals.iter().map(|a| a.to_string()).collect();
        all.extend(d.group_addresses().iter().map(|a| a.to_string()));
        let unique: BTreeSet<&String> = all.iter().collect();
        assert_eq!(unique.len(), all.len());
        assert_eq!(d.groups_of(&d.individuals[5]).len(), 2);
    }

    #[test]
    fn rename_inserts_underscore() {
        let mut d = Directory::generate("abc.com", 10, 3);
        let old = d.group_addresses();
        let report = d.rename_group_ids();
        assert_eq!(report.remap[0].1.to_string(), "all_staff@abc.com");
        assert_eq!(report.remap.len(), 3);
        for a in &old {
            assert!(d.resolve(a).is_none());
        }
        assert!(matches!(d.resolve(&report.remap[0].1), Some(Resolved::Group(_))));
        d.rename_group_ids();
        assert_eq!(d.groups[0].address.local(), "all__staff");
    }

    #[test]
    fn rename_of_empty_directory_is_noop() {
        let mut d = Directory::generate("abc.com", 0, 0);
        assert!(d.rename_group_ids().remap.is_empty());
        assert_eq!(d, Directory::generate("abc.com", 0, 0));
    }
}
